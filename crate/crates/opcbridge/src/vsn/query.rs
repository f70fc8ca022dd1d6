//! SQL-like selection queries: `SELECT ... FROM source [WHERE ...]`.
//!
//! Keywords are case-insensitive, column names case-sensitive. A select list
//! is either plain columns (`*` included) or aggregate calls — never a mix.
//! The full grammar is in `docs/query-grammar.md`.

use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("query syntax error at byte {offset}: {reason}")]
pub struct QuerySyntaxError {
    pub offset: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub select: SelectList,
    pub from: String,
    pub where_clause: Option<Expr>,
}

impl Query {
    pub fn has_aggregates(&self) -> bool {
        matches!(self.select, SelectList::Aggregates(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SelectList {
    /// `SELECT *`
    Star,
    Columns(Vec<String>),
    Aggregates(Vec<AggregateCall>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregateFunc {
    Avg,
    Min,
    Max,
    Count,
    Last,
}

impl AggregateFunc {
    pub fn name(&self) -> &'static str {
        match self {
            AggregateFunc::Avg => "avg",
            AggregateFunc::Min => "min",
            AggregateFunc::Max => "max",
            AggregateFunc::Count => "count",
            AggregateFunc::Last => "last",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateCall {
    pub func: AggregateFunc,
    /// `None` means `COUNT(*)`.
    pub column: Option<String>,
}

impl AggregateCall {
    /// Name of the result column, e.g. `avg_temp`, `count`.
    pub fn result_name(&self) -> String {
        match &self.column {
            Some(col) => format!("{}_{col}", self.func.name()),
            None => self.func.name().to_owned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Or(Box<Expr>, Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Compare { left: Operand, op: CmpOp, right: Operand },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Operand {
    Column(String),
    Literal(Literal),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(&self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident(String),
    Int(i64),
    Float(f64),
    Str(String),
    Symbol(&'static str),
}

struct Lexer<'a> {
    src: &'a str,
    tokens: Vec<(usize, Token)>,
}

fn lex(src: &str) -> Result<Vec<(usize, Token)>, QuerySyntaxError> {
    let bytes = src.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len()
                && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_')
            {
                i += 1;
            }
            tokens.push((start, Token::Ident(src[start..i].to_owned())));
        } else if c.is_ascii_digit()
            || (c == '-' && bytes.get(i + 1).is_some_and(|b| (*b as char).is_ascii_digit()))
        {
            i += 1;
            let mut is_float = false;
            while i < bytes.len() {
                let ch = bytes[i] as char;
                if ch.is_ascii_digit() {
                    i += 1;
                } else if ch == '.' && !is_float {
                    is_float = true;
                    i += 1;
                } else {
                    break;
                }
            }
            let text = &src[start..i];
            let tok = if is_float {
                Token::Float(text.parse().map_err(|_| QuerySyntaxError {
                    offset: start,
                    reason: format!("bad number `{text}`"),
                })?)
            } else {
                Token::Int(text.parse().map_err(|_| QuerySyntaxError {
                    offset: start,
                    reason: format!("bad number `{text}`"),
                })?)
            };
            tokens.push((start, tok));
        } else if c == '\'' {
            // Single-quoted string; '' is an escaped quote.
            let mut out = String::new();
            i += 1;
            loop {
                match bytes.get(i) {
                    None => {
                        return Err(QuerySyntaxError {
                            offset: start,
                            reason: "unterminated string".to_owned(),
                        })
                    }
                    Some(b'\'') if bytes.get(i + 1) == Some(&b'\'') => {
                        out.push('\'');
                        i += 2;
                    }
                    Some(b'\'') => {
                        i += 1;
                        break;
                    }
                    Some(_) => {
                        let ch_len = src[i..].chars().next().unwrap().len_utf8();
                        out.push_str(&src[i..i + ch_len]);
                        i += ch_len;
                    }
                }
            }
            tokens.push((start, Token::Str(out)));
        } else {
            let sym: &'static str = match c {
                '(' => "(",
                ')' => ")",
                ',' => ",",
                '*' => "*",
                '=' => "=",
                '!' if bytes.get(i + 1) == Some(&b'=') => "!=",
                '<' if bytes.get(i + 1) == Some(&b'=') => "<=",
                '<' => "<",
                '>' if bytes.get(i + 1) == Some(&b'=') => ">=",
                '>' => ">",
                other => {
                    return Err(QuerySyntaxError {
                        offset: start,
                        reason: format!("unexpected character `{other}`"),
                    })
                }
            };
            i += sym.len();
            tokens.push((start, Token::Symbol(sym)));
        }
    }
    Ok(tokens)
}

struct Parser<'a> {
    lexer: Lexer<'a>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, offset: usize, reason: impl Into<String>) -> QuerySyntaxError {
        QuerySyntaxError { offset, reason: reason.into() }
    }

    fn peek(&self) -> Option<&(usize, Token)> {
        self.lexer.tokens.get(self.pos)
    }

    fn next(&mut self, what: &str) -> Result<(usize, Token), QuerySyntaxError> {
        let t = self
            .lexer
            .tokens
            .get(self.pos)
            .cloned()
            .ok_or_else(|| self.err(self.lexer.src.len(), format!("expected {what}")))?;
        self.pos += 1;
        Ok(t)
    }

    /// Consumes the next token if it is the given (case-insensitive) keyword.
    fn eat_keyword(&mut self, kw: &str) -> bool {
        if let Some((_, Token::Ident(id))) = self.peek() {
            if id.eq_ignore_ascii_case(kw) {
                self.pos += 1;
                return true;
            }
        }
        false
    }

    fn eat_symbol(&mut self, sym: &str) -> bool {
        if let Some((_, Token::Symbol(s))) = self.peek() {
            if *s == sym {
                self.pos += 1;
                return true;
            }
        }
        false
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), QuerySyntaxError> {
        let (off, tok) = self.next(&format!("keyword {kw}"))?;
        match tok {
            Token::Ident(id) if id.eq_ignore_ascii_case(kw) => Ok(()),
            other => Err(self.err(off, format!("expected {kw}, found {other:?}"))),
        }
    }

    /// A plain identifier that is not a reserved keyword.
    fn identifier(&mut self, what: &str) -> Result<(usize, String), QuerySyntaxError> {
        let (off, tok) = self.next(what)?;
        match tok {
            Token::Ident(id) if !is_keyword(&id) => Ok((off, id)),
            other => Err(self.err(off, format!("expected {what}, found {other:?}"))),
        }
    }

    fn select_list(&mut self) -> Result<SelectList, QuerySyntaxError> {
        if self.eat_symbol("*") {
            return Ok(SelectList::Star);
        }
        let mut columns = Vec::new();
        let mut aggregates = Vec::new();
        loop {
            let (off, name) = self.identifier("column or aggregate")?;
            if let Some(func) = aggregate_func(&name) {
                if !self.eat_symbol("(") {
                    return Err(self.err(off, format!("{} requires (column)", name.to_uppercase())));
                }
                let column = if self.eat_symbol("*") {
                    if func != AggregateFunc::Count {
                        return Err(self.err(off, "only COUNT accepts *"));
                    }
                    None
                } else {
                    Some(self.identifier("aggregate column")?.1)
                };
                if !self.eat_symbol(")") {
                    return Err(self.err(off, "missing )"));
                }
                aggregates.push(AggregateCall { func, column });
            } else {
                columns.push((off, name));
            }
            if !self.eat_symbol(",") {
                break;
            }
        }
        match (columns.is_empty(), aggregates.is_empty()) {
            (false, true) => Ok(SelectList::Columns(columns.into_iter().map(|(_, c)| c).collect())),
            (true, false) => Ok(SelectList::Aggregates(aggregates)),
            (false, false) => Err(self.err(
                columns[0].0,
                "aggregates and plain columns do not mix in one SELECT",
            )),
            (true, true) => Err(self.err(self.lexer.src.len(), "empty select list")),
        }
    }

    fn operand(&mut self) -> Result<Operand, QuerySyntaxError> {
        let (off, tok) = self.next("operand")?;
        Ok(match tok {
            Token::Ident(id) if id.eq_ignore_ascii_case("true") => {
                Operand::Literal(Literal::Bool(true))
            }
            Token::Ident(id) if id.eq_ignore_ascii_case("false") => {
                Operand::Literal(Literal::Bool(false))
            }
            Token::Ident(id) if !is_keyword(&id) => Operand::Column(id),
            Token::Int(v) => Operand::Literal(Literal::Int(v)),
            Token::Float(v) => Operand::Literal(Literal::Float(v)),
            Token::Str(s) => Operand::Literal(Literal::Text(s)),
            other => return Err(self.err(off, format!("expected operand, found {other:?}"))),
        })
    }

    fn comparison(&mut self) -> Result<Expr, QuerySyntaxError> {
        let left = self.operand()?;
        let (off, tok) = self.next("comparison operator")?;
        let op = match tok {
            Token::Symbol("=") => CmpOp::Eq,
            Token::Symbol("!=") => CmpOp::Ne,
            Token::Symbol("<") => CmpOp::Lt,
            Token::Symbol("<=") => CmpOp::Le,
            Token::Symbol(">") => CmpOp::Gt,
            Token::Symbol(">=") => CmpOp::Ge,
            other => return Err(self.err(off, format!("expected operator, found {other:?}"))),
        };
        let right = self.operand()?;
        Ok(Expr::Compare { left, op, right })
    }

    fn factor(&mut self) -> Result<Expr, QuerySyntaxError> {
        if self.eat_symbol("(") {
            let e = self.or_expr()?;
            if !self.eat_symbol(")") {
                let off = self.peek().map_or(self.lexer.src.len(), |(o, _)| *o);
                return Err(self.err(off, "missing )"));
            }
            return Ok(e);
        }
        self.comparison()
    }

    fn and_expr(&mut self) -> Result<Expr, QuerySyntaxError> {
        let mut left = self.factor()?;
        while self.eat_keyword("AND") {
            let right = self.factor()?;
            left = Expr::And(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn or_expr(&mut self) -> Result<Expr, QuerySyntaxError> {
        let mut left = self.and_expr()?;
        while self.eat_keyword("OR") {
            let right = self.and_expr()?;
            left = Expr::Or(Box::new(left), Box::new(right));
        }
        Ok(left)
    }
}

fn aggregate_func(name: &str) -> Option<AggregateFunc> {
    Some(match name.to_ascii_uppercase().as_str() {
        "AVG" => AggregateFunc::Avg,
        "MIN" => AggregateFunc::Min,
        "MAX" => AggregateFunc::Max,
        "COUNT" => AggregateFunc::Count,
        "LAST" => AggregateFunc::Last,
        _ => return None,
    })
}

fn is_keyword(id: &str) -> bool {
    matches!(
        id.to_ascii_uppercase().as_str(),
        "SELECT" | "FROM" | "WHERE" | "AND" | "OR" | "TRUE" | "FALSE"
    )
}

pub fn parse_query(text: &str) -> Result<Query, QuerySyntaxError> {
    let tokens = lex(text)?;
    let mut p = Parser { lexer: Lexer { src: text, tokens }, pos: 0 };
    p.expect_keyword("SELECT")?;
    let select = p.select_list()?;
    p.expect_keyword("FROM")?;
    let (_, from) = p.identifier("source name")?;
    let where_clause = if p.eat_keyword("WHERE") { Some(p.or_expr()?) } else { None };
    if let Some((off, tok)) = p.peek() {
        return Err(QuerySyntaxError {
            offset: *off,
            reason: format!("unexpected trailing token {tok:?}"),
        });
    }
    Ok(Query { select, from, where_clause })
}
