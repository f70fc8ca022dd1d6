//! The "OPC-lite" wire protocol: a line-oriented text codec standing in for
//! the COM/DCOM transport of classic Data Access.
//!
//! One message per line, UTF-8, `\n` terminated, tokens separated by single
//! spaces: `SEQ VERB ARGS...`. The full grammar is documented in
//! `docs/protocol.md`; the encoder here is the normative producer and
//! `decode(encode(m)) == m` holds for every well-formed message.

pub mod hexfloat;

use percent_encoding::{percent_decode_str, utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use thiserror::Error;

use crate::model::{ItemValue, OpcTimestamp, Quality, QualityStatus, ScalarValue};

/// Longest accepted line, terminator excluded.
pub const MAX_LINE_BYTES: usize = 64 * 1024;

/// Everything outside the RFC-3986 unreserved set is percent-encoded.
const WIRE_ESCAPE: &AsciiSet = &NON_ALPHANUMERIC
    .remove(b'-')
    .remove(b'.')
    .remove(b'_')
    .remove(b'~');

/// Error codes a server may answer with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCode {
    UnknownItem,
    UnknownGroup,
    BadRequest,
    WriteDenied,
}

impl ErrorCode {
    fn token(&self) -> &'static str {
        match self {
            ErrorCode::UnknownItem => "UNKNOWN_ITEM",
            ErrorCode::UnknownGroup => "UNKNOWN_GROUP",
            ErrorCode::BadRequest => "BAD_REQUEST",
            ErrorCode::WriteDenied => "WRITE_DENIED",
        }
    }

    fn from_token(t: &str) -> Option<ErrorCode> {
        Some(match t {
            "UNKNOWN_ITEM" => ErrorCode::UnknownItem,
            "UNKNOWN_GROUP" => ErrorCode::UnknownGroup,
            "BAD_REQUEST" => ErrorCode::BadRequest,
            "WRITE_DENIED" => ErrorCode::WriteDenied,
            _ => return None,
        })
    }
}

/// A complete protocol message. Every message carries the sequence number
/// of its exchange; a response's `seq` equals the request's.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    // Requests.
    Hello { seq: u64, version: i64 },
    Browse { seq: u64 },
    AddGroup { seq: u64, group: String, update_rate_ms: u64 },
    AddItems { seq: u64, group: String, items: Vec<String> },
    SyncRead { seq: u64, group: String },
    Write { seq: u64, item: String, value: ScalarValue },
    RemoveGroup { seq: u64, group: String },
    Bye { seq: u64 },
    // Responses.
    Ok { seq: u64 },
    ItemList { seq: u64, items: Vec<String> },
    ReadResult { seq: u64, entries: Vec<(String, ItemValue)> },
    Error { seq: u64, code: ErrorCode, detail: String },
}

impl Message {
    pub fn seq(&self) -> u64 {
        match self {
            Message::Hello { seq, .. }
            | Message::Browse { seq }
            | Message::AddGroup { seq, .. }
            | Message::AddItems { seq, .. }
            | Message::SyncRead { seq, .. }
            | Message::Write { seq, .. }
            | Message::RemoveGroup { seq, .. }
            | Message::Bye { seq }
            | Message::Ok { seq }
            | Message::ItemList { seq, .. }
            | Message::ReadResult { seq, .. }
            | Message::Error { seq, .. } => *seq,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("parse error at byte {offset}: {reason}")]
pub struct ParseError {
    pub offset: usize,
    pub reason: String,
}

fn err(offset: usize, reason: impl Into<String>) -> ParseError {
    ParseError { offset, reason: reason.into() }
}

/// Group and item names: `[A-Za-z_][A-Za-z0-9_./]*`.
pub fn is_wire_name(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.' || c == '/')
}

fn pct_encode(s: &str) -> String {
    utf8_percent_encode(s, WIRE_ESCAPE).to_string()
}

fn pct_decode(tok: &str, offset: usize) -> Result<String, ParseError> {
    percent_decode_str(tok)
        .decode_utf8()
        .map(|c| c.into_owned())
        .map_err(|_| err(offset, "percent-encoded token is not valid UTF-8"))
}

fn encode_value(v: &ScalarValue) -> String {
    match v {
        ScalarValue::Bool(b) => format!("B:{b}"),
        ScalarValue::I16(n) => format!("I16:{n}"),
        ScalarValue::I32(n) => format!("I32:{n}"),
        ScalarValue::I64(n) => format!("I64:{n}"),
        ScalarValue::F32(x) => format!("F32:{}", hexfloat::format_f32(*x)),
        ScalarValue::F64(x) => format!("F64:{}", hexfloat::format_f64(*x)),
        ScalarValue::Text(s) => format!("S:{}", pct_encode(s)),
    }
}

fn decode_value(tok: &str, offset: usize) -> Result<ScalarValue, ParseError> {
    let (tag, payload) = tok
        .split_once(':')
        .ok_or_else(|| err(offset, format!("value `{tok}` lacks a type tag")))?;
    let map_num = |reason: String| err(offset, reason);
    Ok(match tag {
        "B" => match payload {
            "true" => ScalarValue::Bool(true),
            "false" => ScalarValue::Bool(false),
            other => return Err(err(offset, format!("bad boolean `{other}`"))),
        },
        "I16" => ScalarValue::I16(
            payload.parse().map_err(|_| map_num(format!("bad i16 `{payload}`")))?,
        ),
        "I32" => ScalarValue::I32(
            payload.parse().map_err(|_| map_num(format!("bad i32 `{payload}`")))?,
        ),
        "I64" => ScalarValue::I64(
            payload.parse().map_err(|_| map_num(format!("bad i64 `{payload}`")))?,
        ),
        "F32" => ScalarValue::F32(hexfloat::parse_f32(payload).map_err(|e| err(offset, e))?),
        "F64" => ScalarValue::F64(hexfloat::parse_f64(payload).map_err(|e| err(offset, e))?),
        "S" => ScalarValue::Text(pct_decode(payload, offset)?),
        other => return Err(err(offset, format!("unknown value tag `{other}`"))),
    })
}

fn encode_quality(q: &Quality) -> String {
    match q.status {
        QualityStatus::Good => "G".to_owned(),
        QualityStatus::Uncertain => format!("U{}", q.substatus),
        QualityStatus::Bad => format!("B{}", q.substatus),
    }
}

fn decode_quality(tok: &str, offset: usize) -> Result<Quality, ParseError> {
    if tok == "G" {
        return Ok(Quality::GOOD);
    }
    let (head, rest) = tok.split_at(1.min(tok.len()));
    let code: u8 = rest
        .parse()
        .map_err(|_| err(offset, format!("bad quality `{tok}`")))?;
    match head {
        "U" => Ok(Quality::uncertain(code)),
        "B" => Ok(Quality::bad(code)),
        _ => Err(err(offset, format!("bad quality `{tok}`"))),
    }
}

fn encode_item_value(iv: &ItemValue) -> String {
    format!(
        "{};{};{}",
        encode_value(&iv.value),
        encode_quality(&iv.quality),
        iv.timestamp.0
    )
}

fn decode_item_value(tok: &str, offset: usize) -> Result<ItemValue, ParseError> {
    let mut parts = tok.rsplitn(3, ';');
    let ts_tok = parts.next().unwrap_or("");
    let q_tok = parts
        .next()
        .ok_or_else(|| err(offset, format!("item value `{tok}` lacks quality")))?;
    let v_tok = parts
        .next()
        .ok_or_else(|| err(offset, format!("item value `{tok}` lacks timestamp")))?;
    let ts: u64 = ts_tok
        .parse()
        .map_err(|_| err(offset, format!("bad timestamp `{ts_tok}`")))?;
    Ok(ItemValue {
        value: decode_value(v_tok, offset)?,
        quality: decode_quality(q_tok, offset)?,
        timestamp: OpcTimestamp(ts),
    })
}

/// Encodes a message as one `\n`-terminated line.
pub fn encode(msg: &Message) -> String {
    let mut line = msg.seq().to_string();
    let push = |line: &mut String, tok: &str| {
        line.push(' ');
        line.push_str(tok);
    };
    match msg {
        Message::Hello { version, .. } => {
            push(&mut line, "HELLO");
            push(&mut line, &version.to_string());
        }
        Message::Browse { .. } => push(&mut line, "BROWSE"),
        Message::AddGroup { group, update_rate_ms, .. } => {
            push(&mut line, "ADD_GROUP");
            push(&mut line, group);
            push(&mut line, &update_rate_ms.to_string());
        }
        Message::AddItems { group, items, .. } => {
            push(&mut line, "ADD_ITEMS");
            push(&mut line, group);
            for it in items {
                push(&mut line, it);
            }
        }
        Message::SyncRead { group, .. } => {
            push(&mut line, "SYNC_READ");
            push(&mut line, group);
        }
        Message::Write { item, value, .. } => {
            push(&mut line, "WRITE");
            push(&mut line, item);
            push(&mut line, &encode_value(value));
        }
        Message::RemoveGroup { group, .. } => {
            push(&mut line, "REMOVE_GROUP");
            push(&mut line, group);
        }
        Message::Bye { .. } => push(&mut line, "BYE"),
        Message::Ok { .. } => push(&mut line, "OK"),
        Message::ItemList { items, .. } => {
            push(&mut line, "ITEM_LIST");
            for it in items {
                push(&mut line, it);
            }
        }
        Message::ReadResult { entries, .. } => {
            push(&mut line, "READ_RESULT");
            for (item, iv) in entries {
                push(&mut line, &format!("{item}={}", encode_item_value(iv)));
            }
        }
        Message::Error { code, detail, .. } => {
            push(&mut line, "ERROR");
            push(&mut line, code.token());
            if !detail.is_empty() {
                push(&mut line, &pct_encode(detail));
            }
        }
    }
    line.push('\n');
    line
}

/// Tokens plus their byte offsets within the line.
struct Tokens<'a> {
    toks: Vec<(usize, &'a str)>,
    pos: usize,
    line_len: usize,
}

impl<'a> Tokens<'a> {
    fn new(line: &'a str) -> Result<Tokens<'a>, ParseError> {
        let mut toks = Vec::new();
        let mut offset = 0;
        for tok in line.split(' ') {
            if tok.is_empty() {
                return Err(err(offset, "empty token (double or trailing space)"));
            }
            toks.push((offset, tok));
            offset += tok.len() + 1;
        }
        Ok(Tokens { toks, pos: 0, line_len: line.len() })
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str), ParseError> {
        let t = self
            .toks
            .get(self.pos)
            .copied()
            .ok_or_else(|| err(self.line_len, format!("missing {what}")))?;
        self.pos += 1;
        Ok(t)
    }

    fn rest(&mut self) -> impl Iterator<Item = (usize, &'a str)> + '_ {
        let from = self.pos;
        self.pos = self.toks.len();
        self.toks[from..].iter().copied()
    }

    fn finish(&self) -> Result<(), ParseError> {
        match self.toks.get(self.pos) {
            Some((off, tok)) => Err(err(*off, format!("unexpected trailing token `{tok}`"))),
            None => Ok(()),
        }
    }
}

fn expect_name(tok: (usize, &str)) -> Result<String, ParseError> {
    if is_wire_name(tok.1) {
        Ok(tok.1.to_owned())
    } else {
        Err(err(tok.0, format!("`{}` is not a valid name", tok.1)))
    }
}

/// Decodes one complete line (without the trailing `\n`).
pub fn decode(line: &str) -> Result<Message, ParseError> {
    if line.len() > MAX_LINE_BYTES {
        return Err(err(MAX_LINE_BYTES, "line exceeds 64 KiB"));
    }
    let mut toks = Tokens::new(line)?;
    let (seq_off, seq_tok) = toks.next("sequence number")?;
    let seq: u64 = seq_tok
        .parse()
        .map_err(|_| err(seq_off, format!("bad sequence number `{seq_tok}`")))?;
    let (verb_off, verb) = toks.next("verb")?;
    let msg = match verb {
        "HELLO" => {
            let (off, v) = toks.next("version")?;
            let version: i64 =
                v.parse().map_err(|_| err(off, format!("bad version `{v}`")))?;
            Message::Hello { seq, version }
        }
        "BROWSE" => Message::Browse { seq },
        "ADD_GROUP" => {
            let group = expect_name(toks.next("group name")?)?;
            let (off, r) = toks.next("update rate")?;
            let update_rate_ms: u64 =
                r.parse().map_err(|_| err(off, format!("bad update rate `{r}`")))?;
            Message::AddGroup { seq, group, update_rate_ms }
        }
        "ADD_ITEMS" => {
            let group = expect_name(toks.next("group name")?)?;
            let items = toks
                .rest()
                .map(expect_name)
                .collect::<Result<Vec<_>, _>>()?;
            Message::AddItems { seq, group, items }
        }
        "SYNC_READ" => Message::SyncRead { seq, group: expect_name(toks.next("group name")?)? },
        "WRITE" => {
            let item = expect_name(toks.next("item name")?)?;
            let (off, v) = toks.next("value")?;
            Message::Write { seq, item, value: decode_value(v, off)? }
        }
        "REMOVE_GROUP" => {
            Message::RemoveGroup { seq, group: expect_name(toks.next("group name")?)? }
        }
        "BYE" => Message::Bye { seq },
        "OK" => Message::Ok { seq },
        "ITEM_LIST" => {
            let items = toks
                .rest()
                .map(expect_name)
                .collect::<Result<Vec<_>, _>>()?;
            Message::ItemList { seq, items }
        }
        "READ_RESULT" => {
            let entries = toks
                .rest()
                .map(|(off, tok)| {
                    let (item, rest) = tok.split_once('=').ok_or_else(|| {
                        err(off, format!("entry `{tok}` lacks `=`"))
                    })?;
                    if !is_wire_name(item) {
                        return Err(err(off, format!("`{item}` is not a valid name")));
                    }
                    Ok((item.to_owned(), decode_item_value(rest, off)?))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Message::ReadResult { seq, entries }
        }
        "ERROR" => {
            let (off, code_tok) = toks.next("error code")?;
            let code = ErrorCode::from_token(code_tok)
                .ok_or_else(|| err(off, format!("unknown error code `{code_tok}`")))?;
            let detail = match toks.toks.get(toks.pos).copied() {
                Some((off, tok)) => {
                    toks.pos += 1;
                    pct_decode(tok, off)?
                }
                None => String::new(),
            };
            Message::Error { seq, code, detail }
        }
        other => return Err(err(verb_off, format!("unknown verb `{other}`"))),
    };
    toks.finish()?;
    Ok(msg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rt(msg: Message) {
        let line = encode(&msg);
        assert!(line.ends_with('\n'));
        let back = decode(line.trim_end_matches('\n')).unwrap();
        assert_eq!(back, msg);
    }

    #[test]
    fn sync_read_example() {
        let m = Message::SyncRead { seq: 7, group: "g1".to_owned() };
        assert_eq!(encode(&m), "7 SYNC_READ g1\n");
        rt(m);
    }

    #[test]
    fn read_result_example() {
        let m = Message::ReadResult {
            seq: 7,
            entries: vec![(
                "bath1".to_owned(),
                ItemValue::good(ScalarValue::Bool(true), 1500),
            )],
        };
        assert_eq!(encode(&m), "7 READ_RESULT bath1=B:true;G;1500\n");
        rt(m);
    }

    #[test]
    fn write_text_example() {
        let m = Message::Write {
            seq: 3,
            item: "cam".to_owned(),
            value: ScalarValue::Text("bath 2".to_owned()),
        };
        assert_eq!(encode(&m), "3 WRITE cam S:bath%202\n");
        rt(m);
    }

    #[test]
    fn non_integer_seq_rejected() {
        let e = decode("x BROWSE").unwrap_err();
        assert_eq!(e.offset, 0);
    }

    #[test]
    fn unknown_verb_rejected() {
        let e = decode("1 FROB").unwrap_err();
        assert_eq!(e.offset, 2);
    }

    #[test]
    fn trailing_tokens_rejected() {
        assert!(decode("1 BYE extra").is_err());
        assert!(decode("1 BROWSE ").is_err());
    }

    #[test]
    fn oversized_line_rejected() {
        let line = format!("1 WRITE x S:{}", "a".repeat(MAX_LINE_BYTES));
        assert!(decode(&line).is_err());
    }

    #[test]
    fn empty_collections_round_trip() {
        rt(Message::ItemList { seq: 9, items: vec![] });
        rt(Message::ReadResult { seq: 9, entries: vec![] });
        rt(Message::AddItems { seq: 2, group: "g".to_owned(), items: vec![] });
        rt(Message::Error {
            seq: 4,
            code: ErrorCode::BadRequest,
            detail: String::new(),
        });
    }

    #[test]
    fn unicode_detail_round_trips() {
        rt(Message::Error {
            seq: 1,
            code: ErrorCode::UnknownItem,
            detail: "item „å“ fehlt / 欠落".to_owned(),
        });
        rt(Message::Write {
            seq: 2,
            item: "t".to_owned(),
            value: ScalarValue::Text("%20 lit & 100%\nnewline".to_owned()),
        });
    }

    #[test]
    fn float_values_round_trip_bit_exact() {
        for v in [0.0f64, -0.0, f64::MIN_POSITIVE / 8.0, 1.5e300] {
            rt(Message::Write {
                seq: 1,
                item: "f".to_owned(),
                value: ScalarValue::F64(v),
            });
        }
        rt(Message::Write {
            seq: 1,
            item: "f".to_owned(),
            value: ScalarValue::F32(-0.0),
        });
    }

    #[test]
    fn quality_codes_round_trip() {
        for q in [Quality::GOOD, Quality::uncertain(3), Quality::bad(17)] {
            rt(Message::ReadResult {
                seq: 5,
                entries: vec![(
                    "x".to_owned(),
                    ItemValue {
                        value: ScalarValue::I16(-2),
                        quality: q,
                        timestamp: OpcTimestamp(42),
                    },
                )],
            });
        }
    }

    #[test]
    fn bad_names_rejected() {
        assert!(decode("1 SYNC_READ 9bad").is_err());
        assert!(decode("1 ADD_ITEMS g ok 9bad").is_err());
        assert!(decode("1 WRITE it:em B:true").is_err());
    }

    #[test]
    fn framing_splits_concatenated_messages() {
        let msgs = vec![
            Message::Hello { seq: 1, version: 1 },
            Message::Browse { seq: 2 },
            Message::Bye { seq: 3 },
        ];
        let stream: String = msgs.iter().map(encode).collect();
        let back: Vec<Message> = stream
            .split_terminator('\n')
            .map(|l| decode(l).unwrap())
            .collect();
        assert_eq!(back, msgs);
    }
}
