//! TCP front end: one session thread per connection, a generator thread
//! rewriting the cache, and a handle to shut the listener down.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use crate::clock::Clock;
use crate::protocol::MAX_LINE_BYTES;
use crate::server::session::SessionState;
use crate::server::{ServerConfig, ServerCore, ServerError};

pub struct ServerHandle {
    core: Arc<ServerCore>,
    pub local_addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    sessions: Arc<Mutex<Vec<TcpStream>>>,
    accept_thread: Option<JoinHandle<()>>,
    generator_thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn core(&self) -> Arc<ServerCore> {
        Arc::clone(&self.core)
    }

    /// Stops accepting, halts the generators and drops live sessions.
    pub fn stop(mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        for stream in self.sessions.lock().unwrap().drain(..) {
            let _ = stream.shutdown(std::net::Shutdown::Both);
        }
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
        if let Some(t) = self.generator_thread.take() {
            let _ = t.join();
        }
    }
}

/// Builds the cache, starts the generator loop and accepts connections on
/// `config.listen_port` (or the override). Port 0 picks a free port.
pub fn start(
    config: &ServerConfig,
    clock: Arc<dyn Clock>,
    port_override: Option<u16>,
) -> Result<ServerHandle, ServerError> {
    let core = Arc::new(ServerCore::new(config, Arc::clone(&clock))?);
    let port = port_override.unwrap_or(config.listen_port);
    let listener = TcpListener::bind(("127.0.0.1", port))
        .map_err(|source| ServerError::PortInUse { port, source })?;
    let local_addr = listener.local_addr()?;
    listener.set_nonblocking(true)?;
    log::info!("opc server listening on {local_addr}");

    let shutdown = Arc::new(AtomicBool::new(false));
    let sessions: Arc<Mutex<Vec<TcpStream>>> = Arc::new(Mutex::new(Vec::new()));

    let generator_thread = {
        let core = Arc::clone(&core);
        let clock = Arc::clone(&clock);
        let shutdown = Arc::clone(&shutdown);
        std::thread::Builder::new()
            .name("opc-generators".to_owned())
            .spawn(move || loop {
                if shutdown.load(Ordering::SeqCst) {
                    return;
                }
                let now = clock.now_ms();
                match core.tick_generators(now) {
                    // Sleep in bounded slices so shutdown stays responsive.
                    Some(next) => clock.sleep_until(next.min(now + 200)),
                    None => return, // only external items; nothing to do
                }
            })?
    };

    let accept_thread = {
        let core = Arc::clone(&core);
        let shutdown = Arc::clone(&shutdown);
        let sessions = Arc::clone(&sessions);
        std::thread::Builder::new()
            .name("opc-accept".to_owned())
            .spawn(move || loop {
                if shutdown.load(Ordering::SeqCst) {
                    return;
                }
                match listener.accept() {
                    Ok((stream, peer)) => {
                        log::debug!("session from {peer}");
                        if let Ok(clone) = stream.try_clone() {
                            sessions.lock().unwrap().push(clone);
                        }
                        let core = Arc::clone(&core);
                        let _ = std::thread::Builder::new()
                            .name(format!("opc-session-{peer}"))
                            .spawn(move || run_session(&core, stream));
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        std::thread::sleep(Duration::from_millis(10));
                    }
                    Err(e) => {
                        log::warn!("accept failed: {e}");
                        std::thread::sleep(Duration::from_millis(100));
                    }
                }
            })?
    };

    Ok(ServerHandle {
        core,
        local_addr,
        shutdown,
        sessions,
        accept_thread: Some(accept_thread),
        generator_thread: Some(generator_thread),
    })
}

fn run_session(core: &ServerCore, stream: TcpStream) {
    let mut session = SessionState::new();
    let mut writer = match stream.try_clone() {
        Ok(w) => w,
        Err(e) => {
            log::warn!("session clone failed: {e}");
            return;
        }
    };
    let mut reader = BufReader::new(stream);
    let mut buf = Vec::new();
    loop {
        buf.clear();
        match reader.read_until(b'\n', &mut buf) {
            Ok(0) => return, // client closed
            Ok(_) => {}
            Err(e) => {
                log::debug!("session read error: {e}");
                return;
            }
        }
        if buf.len() > MAX_LINE_BYTES + 1 {
            log::warn!("session torn down: oversized line");
            return;
        }
        let Ok(text) = std::str::from_utf8(&buf) else {
            log::warn!("session torn down: invalid utf-8");
            return;
        };
        let line = text.trim_end_matches(['\n', '\r']);
        let out = session.handle_line(core, line);
        for resp in &out.responses {
            if writer.write_all(resp.as_bytes()).and_then(|_| writer.flush()).is_err() {
                return;
            }
        }
        if out.close {
            return;
        }
    }
}
