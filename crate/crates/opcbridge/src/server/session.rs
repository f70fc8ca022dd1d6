//! Per-session protocol handling, transport-agnostic. The TCP front end and
//! the in-process loopback both feed lines through [`SessionState::handle_line`].

use crate::protocol::{decode, encode, ErrorCode, Message};
use crate::server::{ServerCore, WriteOutcome};
use crate::PROTOCOL_VERSION;

/// Groups are per-session: two sessions may use the same group name without
/// interfering, and teardown drops everything with the session.
#[derive(Default)]
pub struct SessionState {
    hello_done: bool,
    groups: OrderedGroups,
}

/// Result of feeding one line to a session.
pub struct SessionOutput {
    /// Encoded response lines (each `\n`-terminated).
    pub responses: Vec<String>,
    /// Session must be torn down after sending the responses.
    pub close: bool,
}

impl SessionState {
    pub fn new() -> SessionState {
        SessionState::default()
    }

    /// Handles one raw line. Malformed lines tear the session down.
    pub fn handle_line(&mut self, core: &ServerCore, line: &str) -> SessionOutput {
        match decode(line) {
            Ok(msg) => {
                let (resp, close) = self.handle_message(core, msg);
                SessionOutput { responses: vec![encode(&resp)], close }
            }
            Err(e) => {
                log::warn!("session torn down on parse error: {e}");
                SessionOutput { responses: Vec::new(), close: true }
            }
        }
    }

    pub fn handle_message(&mut self, core: &ServerCore, msg: Message) -> (Message, bool) {
        let seq = msg.seq();
        let error = |code, detail: &str| Message::Error {
            seq,
            code,
            detail: detail.to_owned(),
        };

        if !self.hello_done {
            return match msg {
                Message::Hello { version, .. } if version == PROTOCOL_VERSION => {
                    self.hello_done = true;
                    (Message::Ok { seq }, false)
                }
                Message::Hello { version, .. } => (
                    error(ErrorCode::BadRequest, &format!("unsupported version {version}")),
                    true,
                ),
                _ => (error(ErrorCode::BadRequest, "HELLO required first"), true),
            };
        }

        match msg {
            Message::Hello { .. } => (error(ErrorCode::BadRequest, "duplicate HELLO"), false),
            Message::Browse { .. } => (Message::ItemList { seq, items: core.browse() }, false),
            Message::AddGroup { group, update_rate_ms, .. } => {
                if self.groups.contains(&group) {
                    (error(ErrorCode::BadRequest, &format!("group `{group}` exists")), false)
                } else {
                    self.groups.add(group, update_rate_ms);
                    (Message::Ok { seq }, false)
                }
            }
            Message::AddItems { group, items, .. } => {
                if !self.groups.contains(&group) {
                    return (error(ErrorCode::UnknownGroup, &group), false);
                }
                let unknown: Vec<&str> = items
                    .iter()
                    .filter(|i| !core.has_item(i))
                    .map(|s| s.as_str())
                    .collect();
                if !unknown.is_empty() {
                    // Atomic: nothing is added on failure.
                    return (error(ErrorCode::UnknownItem, &unknown.join(",")), false);
                }
                self.groups.extend_items(&group, items);
                (Message::Ok { seq }, false)
            }
            Message::SyncRead { group, .. } => match self.groups.items(&group) {
                None => (error(ErrorCode::UnknownGroup, &group), false),
                Some(items) => {
                    let entries = core
                        .read_items(items)
                        .expect("items validated at ADD_ITEMS time");
                    (Message::ReadResult { seq, entries }, false)
                }
            },
            Message::Write { item, value, .. } => match core.write_item(&item, value) {
                WriteOutcome::Ok => (Message::Ok { seq }, false),
                WriteOutcome::UnknownItem => (error(ErrorCode::UnknownItem, &item), false),
                WriteOutcome::Denied => (error(ErrorCode::WriteDenied, &item), false),
            },
            Message::RemoveGroup { group, .. } => {
                if self.groups.remove(&group) {
                    (Message::Ok { seq }, false)
                } else {
                    (error(ErrorCode::UnknownGroup, &group), false)
                }
            }
            Message::Bye { .. } => (Message::Ok { seq }, true),
            Message::Ok { .. }
            | Message::ItemList { .. }
            | Message::ReadResult { .. }
            | Message::Error { .. } => {
                (error(ErrorCode::BadRequest, "response verb from client"), false)
            }
        }
    }
}

/// Tiny ordered group map; items keep registration order for reads. The
/// update rate is retained so group configs mirror real DA calls, but it
/// drives nothing (subscriptions are out of scope).
#[derive(Default)]
struct OrderedGroups {
    groups: Vec<(String, u64, Vec<String>)>,
}

impl OrderedGroups {
    fn contains(&self, name: &str) -> bool {
        self.groups.iter().any(|(n, _, _)| n == name)
    }

    fn add(&mut self, name: String, update_rate_ms: u64) {
        self.groups.push((name, update_rate_ms, Vec::new()));
    }

    fn extend_items(&mut self, name: &str, items: Vec<String>) {
        if let Some((_, _, list)) = self.groups.iter_mut().find(|(n, _, _)| n == name) {
            list.extend(items);
        }
    }

    fn items(&self, name: &str) -> Option<&[String]> {
        self.groups
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, _, list)| list.as_slice())
    }

    fn remove(&mut self, name: &str) -> bool {
        let before = self.groups.len();
        self.groups.retain(|(n, _, _)| n != name);
        self.groups.len() != before
    }
}
