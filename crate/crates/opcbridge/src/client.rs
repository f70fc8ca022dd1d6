//! Client side of OPC-lite: a session owning its transport, the blocking
//! request/response cycle, and group/item setup. A session belongs to one
//! logical activity (its wrapper's polling loop) and is not reentrant.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::model::{ItemValue, ScalarValue};
use crate::protocol::{decode, encode, ErrorCode, Message, MAX_LINE_BYTES};
use crate::server::session::SessionState;
use crate::server::ServerCore;
use crate::PROTOCOL_VERSION;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("connection refused: {0}")]
    Refused(String),
    #[error("transport closed")]
    Closed,
    #[error("request timed out")]
    Timeout,
    #[error("i/o: {0}")]
    Io(String),
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("connection refused: {0}")]
    ConnectionRefused(String),
    #[error("server speaks an incompatible protocol version: {0}")]
    VersionMismatch(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("unknown items: {}", names.join(", "))]
    UnknownItem { names: Vec<String> },
    #[error("write denied for `{0}`")]
    WriteDenied(String),
    #[error("empty item list")]
    EmptyItemList,
    #[error("server error {code:?}: {detail}")]
    Server { code: ErrorCode, detail: String },
}

/// Byte transport carrying whole protocol lines.
///
/// `send_line` takes one complete encoded line including the trailing `\n`;
/// `recv_line` yields the next response line without its terminator.
pub trait Transport: Send {
    fn send_line(&mut self, line: &str) -> Result<(), TransportError>;
    fn recv_line(&mut self) -> Result<String, TransportError>;
}

/// Real TCP transport with a per-request timeout.
pub struct TcpTransport {
    writer: TcpStream,
    reader: BufReader<TcpStream>,
}

impl TcpTransport {
    pub fn connect(addr: &str, timeout: Duration) -> Result<TcpTransport, TransportError> {
        let stream = TcpStream::connect(addr).map_err(|e| TransportError::Refused(e.to_string()))?;
        stream
            .set_read_timeout(Some(timeout))
            .map_err(|e| TransportError::Io(e.to_string()))?;
        stream
            .set_write_timeout(Some(timeout))
            .map_err(|e| TransportError::Io(e.to_string()))?;
        stream.set_nodelay(true).ok();
        let writer = stream.try_clone().map_err(|e| TransportError::Io(e.to_string()))?;
        Ok(TcpTransport { writer, reader: BufReader::new(stream) })
    }
}

impl Transport for TcpTransport {
    fn send_line(&mut self, line: &str) -> Result<(), TransportError> {
        self.writer
            .write_all(line.as_bytes())
            .and_then(|_| self.writer.flush())
            .map_err(|e| TransportError::Io(e.to_string()))
    }

    fn recv_line(&mut self) -> Result<String, TransportError> {
        let mut buf = Vec::new();
        match self.reader.read_until(b'\n', &mut buf) {
            Ok(0) => Err(TransportError::Closed),
            Ok(_) => {
                if buf.len() > MAX_LINE_BYTES + 1 {
                    return Err(TransportError::Io("oversized response line".to_owned()));
                }
                let text = std::str::from_utf8(&buf)
                    .map_err(|_| TransportError::Io("invalid utf-8".to_owned()))?;
                Ok(text.trim_end_matches(['\n', '\r']).to_owned())
            }
            Err(e)
                if e.kind() == std::io::ErrorKind::WouldBlock
                    || e.kind() == std::io::ErrorKind::TimedOut =>
            {
                Err(TransportError::Timeout)
            }
            Err(e) => Err(TransportError::Io(e.to_string())),
        }
    }
}

/// In-process transport: feeds lines straight into a server core's session
/// logic. Requests complete instantly in simulated time.
pub struct LoopbackTransport {
    core: Arc<ServerCore>,
    session: SessionState,
    pending: std::collections::VecDeque<String>,
    closed: bool,
}

impl LoopbackTransport {
    pub fn new(core: Arc<ServerCore>) -> LoopbackTransport {
        LoopbackTransport {
            core,
            session: SessionState::new(),
            pending: std::collections::VecDeque::new(),
            closed: false,
        }
    }
}

impl Transport for LoopbackTransport {
    fn send_line(&mut self, line: &str) -> Result<(), TransportError> {
        if self.closed {
            return Err(TransportError::Closed);
        }
        let out = self.session.handle_line(&self.core, line.trim_end_matches('\n'));
        self.pending
            .extend(out.responses.iter().map(|r| r.trim_end_matches('\n').to_owned()));
        if out.close {
            self.closed = true;
        }
        Ok(())
    }

    fn recv_line(&mut self) -> Result<String, TransportError> {
        self.pending.pop_front().ok_or(TransportError::Closed)
    }
}

static GROUP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// One client session: handshake done, sequence numbers strictly increasing,
/// at most one group.
pub struct ClientSession {
    transport: Box<dyn Transport>,
    next_seq: u64,
    group: Option<String>,
    items: Vec<String>,
    dead: bool,
}

impl std::fmt::Debug for ClientSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClientSession")
            .field("next_seq", &self.next_seq)
            .field("group", &self.group)
            .field("items", &self.items)
            .field("dead", &self.dead)
            .finish_non_exhaustive()
    }
}

impl ClientSession {
    /// TCP connect + HELLO.
    pub fn connect(addr: &str, timeout: Duration) -> Result<ClientSession, ClientError> {
        let transport = TcpTransport::connect(addr, timeout)
            .map_err(|e| ClientError::ConnectionRefused(e.to_string()))?;
        ClientSession::with_transport(Box::new(transport))
    }

    /// Handshake over an arbitrary transport.
    pub fn with_transport(transport: Box<dyn Transport>) -> Result<ClientSession, ClientError> {
        let mut session = ClientSession {
            transport,
            next_seq: 1,
            group: None,
            items: Vec::new(),
            dead: false,
        };
        match session.request(|seq| Message::Hello { seq, version: PROTOCOL_VERSION })? {
            Message::Ok { .. } => Ok(session),
            Message::Error { detail, .. } => Err(ClientError::VersionMismatch(detail)),
            other => Err(ClientError::Protocol(format!("unexpected HELLO response {other:?}"))),
        }
    }

    fn request(
        &mut self,
        build: impl FnOnce(u64) -> Message,
    ) -> Result<Message, ClientError> {
        if self.dead {
            return Err(TransportError::Closed.into());
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        let msg = build(seq);
        let line = encode(&msg);
        if let Err(e) = self.transport.send_line(&line) {
            self.dead = true;
            return Err(e.into());
        }
        let resp_line = match self.transport.recv_line() {
            Ok(l) => l,
            Err(e) => {
                self.dead = true;
                return Err(e.into());
            }
        };
        let resp = decode(&resp_line).map_err(|e| {
            self.dead = true;
            ClientError::Protocol(format!("bad response: {e}"))
        })?;
        if resp.seq() != seq {
            self.dead = true;
            return Err(ClientError::Protocol(format!(
                "response seq {} does not match request seq {seq}",
                resp.seq()
            )));
        }
        Ok(resp)
    }

    pub fn is_dead(&self) -> bool {
        self.dead
    }

    pub fn browse(&mut self) -> Result<Vec<String>, ClientError> {
        match self.request(|seq| Message::Browse { seq })? {
            Message::ItemList { items, .. } => Ok(items),
            other => Err(unexpected(other)),
        }
    }

    /// Creates this session's group (`w_<pid>_<n>`) and registers `items`.
    /// On unknown items nothing is retained: the group is removed again and
    /// the failing names are reported.
    pub fn setup_items(
        &mut self,
        items: &[String],
        update_rate_ms: u64,
    ) -> Result<(), ClientError> {
        if items.is_empty() {
            return Err(ClientError::EmptyItemList);
        }
        let group = format!(
            "w_{}_{}",
            std::process::id(),
            GROUP_COUNTER.fetch_add(1, Ordering::Relaxed)
        );
        match self.request(|seq| Message::AddGroup {
            seq,
            group: group.clone(),
            update_rate_ms,
        })? {
            Message::Ok { .. } => {}
            other => return Err(unexpected(other)),
        }
        match self.request(|seq| Message::AddItems {
            seq,
            group: group.clone(),
            items: items.to_vec(),
        })? {
            Message::Ok { .. } => {
                self.group = Some(group);
                self.items = items.to_vec();
                Ok(())
            }
            Message::Error { code: ErrorCode::UnknownItem, detail, .. } => {
                // No partial group is left behind.
                let _ = self.request(|seq| Message::RemoveGroup { seq, group: group.clone() });
                Err(ClientError::UnknownItem {
                    names: detail.split(',').map(str::to_owned).collect(),
                })
            }
            other => Err(unexpected(other)),
        }
    }

    /// Synchronous read of this session's group, in registration order.
    pub fn sync_read(&mut self) -> Result<Vec<(String, ItemValue)>, ClientError> {
        let group = self
            .group
            .clone()
            .ok_or_else(|| ClientError::Protocol("setup_items not done".to_owned()))?;
        match self.request(|seq| Message::SyncRead { seq, group })? {
            Message::ReadResult { entries, .. } => {
                if entries.len() != self.items.len()
                    || entries.iter().zip(&self.items).any(|((n, _), want)| n != want)
                {
                    self.dead = true;
                    return Err(ClientError::Protocol(
                        "read result does not match registered items".to_owned(),
                    ));
                }
                Ok(entries)
            }
            other => Err(unexpected(other)),
        }
    }

    pub fn write(&mut self, item: &str, value: ScalarValue) -> Result<(), ClientError> {
        let item_owned = item.to_owned();
        match self.request(|seq| Message::Write { seq, item: item_owned, value })? {
            Message::Ok { .. } => Ok(()),
            Message::Error { code: ErrorCode::WriteDenied, .. } => {
                Err(ClientError::WriteDenied(item.to_owned()))
            }
            Message::Error { code: ErrorCode::UnknownItem, .. } => {
                Err(ClientError::UnknownItem { names: vec![item.to_owned()] })
            }
            other => Err(unexpected(other)),
        }
    }

    /// Polite goodbye; errors ignored.
    pub fn bye(&mut self) {
        let _ = self.request(|seq| Message::Bye { seq });
        self.dead = true;
    }
}

fn unexpected(msg: Message) -> ClientError {
    match msg {
        Message::Error { code, detail, .. } => ClientError::Server { code, detail },
        other => ClientError::Protocol(format!("unexpected response {other:?}")),
    }
}

/// Opens sessions by address. Production connects over TCP; simulations map
/// addresses to in-process server cores.
pub trait Connector: Send + Sync {
    fn connect(&self, addr: &str) -> Result<ClientSession, ClientError>;
}

pub struct TcpConnector {
    pub timeout: Duration,
}

impl Default for TcpConnector {
    fn default() -> Self {
        TcpConnector { timeout: Duration::from_millis(1000) }
    }
}

impl Connector for TcpConnector {
    fn connect(&self, addr: &str) -> Result<ClientSession, ClientError> {
        ClientSession::connect(addr, self.timeout)
    }
}

/// Routes addresses to in-process cores (simulations, the demo).
#[derive(Default)]
pub struct LoopbackConnector {
    cores: HashMap<String, Arc<ServerCore>>,
}

impl LoopbackConnector {
    pub fn new() -> LoopbackConnector {
        LoopbackConnector::default()
    }

    pub fn register(&mut self, addr: &str, core: Arc<ServerCore>) {
        self.cores.insert(addr.to_owned(), core);
    }
}

impl Connector for LoopbackConnector {
    fn connect(&self, addr: &str) -> Result<ClientSession, ClientError> {
        let core = self
            .cores
            .get(addr)
            .ok_or_else(|| ClientError::ConnectionRefused(format!("no server at {addr}")))?;
        ClientSession::with_transport(Box::new(LoopbackTransport::new(Arc::clone(core))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SimClock;
    use crate::server::{GeneratorSpec, ItemSpec, ServerConfig};

    fn test_core() -> Arc<ServerCore> {
        let config = ServerConfig {
            listen_port: 0,
            start_time_ms: Some(0),
            items: vec![
                ItemSpec {
                    name: "bath1.present".to_owned(),
                    sampling_period_ms: 100,
                    writable: true,
                    generator: GeneratorSpec::External,
                },
                ItemSpec {
                    name: "arm.pos".to_owned(),
                    sampling_period_ms: 100,
                    writable: false,
                    generator: GeneratorSpec::Constant { value: ScalarValue::I32(0) },
                },
            ],
        };
        Arc::new(ServerCore::new(&config, Arc::new(SimClock::new(0))).unwrap())
    }

    fn session(core: &Arc<ServerCore>) -> ClientSession {
        ClientSession::with_transport(Box::new(LoopbackTransport::new(Arc::clone(core)))).unwrap()
    }

    /// Transport double that records every exchanged line.
    struct RecordingTransport {
        inner: LoopbackTransport,
        pub sent: Arc<std::sync::Mutex<Vec<String>>>,
        pub received: Arc<std::sync::Mutex<Vec<String>>>,
    }

    impl Transport for RecordingTransport {
        fn send_line(&mut self, line: &str) -> Result<(), TransportError> {
            self.sent.lock().unwrap().push(line.trim_end().to_owned());
            self.inner.send_line(line)
        }

        fn recv_line(&mut self) -> Result<String, TransportError> {
            let l = self.inner.recv_line()?;
            self.received.lock().unwrap().push(l.clone());
            Ok(l)
        }
    }

    #[test]
    fn setup_and_read_in_registration_order() {
        let core = test_core();
        let mut s = session(&core);
        s.setup_items(&["bath1.present".to_owned(), "arm.pos".to_owned()], 100).unwrap();
        let entries = s.sync_read().unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].0, "bath1.present");
        assert_eq!(entries[1].0, "arm.pos");
    }

    #[test]
    fn unknown_item_leaves_no_group_residue() {
        let core = test_core();
        let mut s = session(&core);
        let err = s
            .setup_items(&["arm.pos".to_owned(), "typo".to_owned()], 100)
            .unwrap_err();
        match err {
            ClientError::UnknownItem { names } => assert_eq!(names, vec!["typo".to_owned()]),
            other => panic!("unexpected {other:?}"),
        }
        // A read without a group fails locally; the server-side group was
        // removed by the cleanup request.
        assert!(s.sync_read().is_err());
    }

    #[test]
    fn empty_item_list_is_a_local_error() {
        let core = test_core();
        let mut s = session(&core);
        assert!(matches!(s.setup_items(&[], 100), Err(ClientError::EmptyItemList)));
    }

    #[test]
    fn write_then_read_back() {
        let core = test_core();
        let mut s = session(&core);
        s.setup_items(&["bath1.present".to_owned()], 50).unwrap();
        s.write("bath1.present", ScalarValue::Bool(true)).unwrap();
        let entries = s.sync_read().unwrap();
        assert_eq!(entries[0].1.value, ScalarValue::Bool(true));
    }

    #[test]
    fn write_denied_and_unknown() {
        let core = test_core();
        let mut s = session(&core);
        assert!(matches!(
            s.write("arm.pos", ScalarValue::I32(1)),
            Err(ClientError::WriteDenied(_))
        ));
        assert!(matches!(
            s.write("ghost", ScalarValue::I32(1)),
            Err(ClientError::UnknownItem { .. })
        ));
    }

    #[test]
    fn seq_pairing_holds_for_every_exchange() {
        let core = test_core();
        let sent = Arc::new(std::sync::Mutex::new(Vec::new()));
        let received = Arc::new(std::sync::Mutex::new(Vec::new()));
        let transport = RecordingTransport {
            inner: LoopbackTransport::new(Arc::clone(&core)),
            sent: Arc::clone(&sent),
            received: Arc::clone(&received),
        };
        let mut s = ClientSession::with_transport(Box::new(transport)).unwrap();
        s.setup_items(&["arm.pos".to_owned()], 10).unwrap();
        s.sync_read().unwrap();
        s.browse().unwrap();
        s.bye();

        let sent = sent.lock().unwrap();
        let received = received.lock().unwrap();
        assert_eq!(sent.len(), received.len());
        let mut prev_seq = 0;
        for (req, resp) in sent.iter().zip(received.iter()) {
            let req_seq = decode(req).unwrap().seq();
            let resp_seq = decode(resp).unwrap().seq();
            assert_eq!(req_seq, resp_seq);
            assert!(req_seq > prev_seq, "seq strictly increases");
            prev_seq = req_seq;
        }
    }

    #[test]
    fn version_mismatch_maps_cleanly() {
        // A future server that rejects HELLO v1.
        struct V2Transport;
        impl Transport for V2Transport {
            fn send_line(&mut self, _line: &str) -> Result<(), TransportError> {
                Ok(())
            }
            fn recv_line(&mut self) -> Result<String, TransportError> {
                Ok("1 ERROR BAD_REQUEST unsupported%20version%201".to_owned())
            }
        }
        let err = ClientSession::with_transport(Box::new(V2Transport)).unwrap_err();
        assert!(matches!(err, ClientError::VersionMismatch(_)));
    }

    #[test]
    fn connect_to_closed_port_is_refused() {
        let err = ClientSession::connect("127.0.0.1:1", Duration::from_millis(200)).unwrap_err();
        assert!(matches!(err, ClientError::ConnectionRefused(_)));
    }
}
