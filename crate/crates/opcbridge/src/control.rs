//! Runtime control surface: a human-typable line protocol over TCP for
//! changing a live wrapper's update period and production mode and for
//! reading its metrics.
//!
//! Commands: `SET-PERIOD <vs> <wrapper> <ms>`, `SET-MODE <vs> <wrapper>
//! PPM|CBPM`, `GET-METRICS <vs> <wrapper>`, `LIST`. Replies are `OK`,
//! `ERR <reason>`, a `key=value` metrics line, or one line per wrapper for
//! `LIST`. SET replies acknowledge enqueueing; the effect lands at the
//! wrapper's next tick.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use crate::vsn::Node;
use crate::wrapper::{ProductionMode, WrapperMetrics};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ControlCommand {
    SetPeriod { vs: String, wrapper: String, ms: u64 },
    SetMode { vs: String, wrapper: String, mode: ProductionMode },
    GetMetrics { vs: String, wrapper: String },
    ListWrappers,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ControlReply {
    Ok,
    Err(String),
    /// One `key=value` metrics line.
    Metrics(String),
    /// One line per wrapper.
    Listing(Vec<String>),
}

impl ControlReply {
    /// Wire form, `\n`-terminated. An empty listing renders as nothing.
    pub fn render(&self) -> String {
        match self {
            ControlReply::Ok => "OK\n".to_owned(),
            ControlReply::Err(reason) => format!("ERR {reason}\n"),
            ControlReply::Metrics(line) => format!("{line}\n"),
            ControlReply::Listing(lines) => {
                lines.iter().map(|l| format!("{l}\n")).collect()
            }
        }
    }
}

pub fn parse_command(line: &str) -> Result<ControlCommand, String> {
    let toks: Vec<&str> = line.split_whitespace().collect();
    match toks.as_slice() {
        ["SET-PERIOD", vs, wrapper, ms] => {
            let ms: u64 = ms.parse().map_err(|_| format!("bad-arg `{ms}` is not a period"))?;
            Ok(ControlCommand::SetPeriod {
                vs: (*vs).to_owned(),
                wrapper: (*wrapper).to_owned(),
                ms,
            })
        }
        ["SET-MODE", vs, wrapper, mode] => {
            let mode = ProductionMode::parse(mode)
                .ok_or_else(|| format!("bad-arg mode must be PPM or CBPM, got `{mode}`"))?;
            Ok(ControlCommand::SetMode {
                vs: (*vs).to_owned(),
                wrapper: (*wrapper).to_owned(),
                mode,
            })
        }
        ["GET-METRICS", vs, wrapper] => Ok(ControlCommand::GetMetrics {
            vs: (*vs).to_owned(),
            wrapper: (*wrapper).to_owned(),
        }),
        ["LIST"] => Ok(ControlCommand::ListWrappers),
        [] => Err("bad-arg empty command".to_owned()),
        [verb, ..] => Err(format!("bad-arg unknown command `{verb}`")),
    }
}

/// Formats a metrics snapshot as one line of `key=value` pairs. Means are
/// omitted while undefined.
pub fn format_metrics(m: &WrapperMetrics) -> String {
    let mut line = format!(
        "mode={} period-ms={} ticks={} emissions={} suppressed={} bad-quality-ticks={} missed-ticks={} overruns={}",
        m.mode.token(),
        m.update_period_ms,
        m.ticks,
        m.emissions,
        m.suppressed,
        m.bad_quality_ticks,
        m.missed_ticks,
        m.overruns,
    );
    if let Some(mean) = m.mean_production_period_ms {
        line.push_str(&format!(" mean-production-period-ms={mean:.3}"));
    }
    if let Some(mean) = m.mean_read_latency_ms {
        line.push_str(&format!(" mean-read-latency-ms={mean:.3}"));
    }
    line
}

/// Routes a command to its wrapper. Targets resolve at execution time, so
/// commands racing a redeploy simply yield `unknown-target`.
pub fn dispatch(node: &Node, cmd: &ControlCommand) -> ControlReply {
    let resolve = |vs: &str, wrapper: &str| {
        node.get_vs(vs)
            .and_then(|vs| vs.wrapper_handle(wrapper))
            .ok_or_else(|| ControlReply::Err("unknown-target".to_owned()))
    };
    match cmd {
        ControlCommand::SetPeriod { vs, wrapper, ms } => match resolve(vs, wrapper) {
            Ok(handle) => match handle.set_update_period(*ms) {
                Ok(()) => ControlReply::Ok,
                Err(e) => ControlReply::Err(format!("bad-arg {e}")),
            },
            Err(e) => e,
        },
        ControlCommand::SetMode { vs, wrapper, mode } => match resolve(vs, wrapper) {
            Ok(handle) => {
                handle.set_mode(*mode);
                ControlReply::Ok
            }
            Err(e) => e,
        },
        ControlCommand::GetMetrics { vs, wrapper } => match resolve(vs, wrapper) {
            Ok(handle) => ControlReply::Metrics(format_metrics(&handle.metrics())),
            Err(e) => e,
        },
        ControlCommand::ListWrappers => ControlReply::Listing(
            node.list_wrappers()
                .into_iter()
                .map(|(vs, wrapper, m)| {
                    format!(
                        "{vs} {wrapper} mode={} period-ms={}",
                        m.mode.token(),
                        m.update_period_ms
                    )
                })
                .collect(),
        ),
    }
}

/// Handles one full command line.
pub fn handle_line(node: &Node, line: &str) -> ControlReply {
    match parse_command(line) {
        Ok(cmd) => dispatch(node, &cmd),
        Err(reason) => ControlReply::Err(reason),
    }
}

pub struct ControlHandle {
    pub local_addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    accept_thread: Option<JoinHandle<()>>,
}

impl ControlHandle {
    pub fn stop(mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }
}

/// Serves the control protocol on `port` (0 picks a free port). Each
/// connection handles a sequence of commands until the client closes.
pub fn serve_control(node: Arc<Node>, port: u16) -> std::io::Result<ControlHandle> {
    let listener = TcpListener::bind(("127.0.0.1", port))?;
    let local_addr = listener.local_addr()?;
    listener.set_nonblocking(true)?;
    log::info!("control plane listening on {local_addr}");
    let shutdown = Arc::new(AtomicBool::new(false));
    let accept_thread = {
        let shutdown = Arc::clone(&shutdown);
        std::thread::Builder::new().name("control-accept".to_owned()).spawn(move || loop {
            if shutdown.load(Ordering::SeqCst) {
                return;
            }
            match listener.accept() {
                Ok((stream, _)) => {
                    let node = Arc::clone(&node);
                    let _ = std::thread::Builder::new()
                        .name("control-session".to_owned())
                        .spawn(move || serve_connection(&node, stream));
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    std::thread::sleep(Duration::from_millis(10));
                }
                Err(e) => {
                    log::warn!("control accept failed: {e}");
                    std::thread::sleep(Duration::from_millis(100));
                }
            }
        })?
    };
    Ok(ControlHandle { local_addr, shutdown, accept_thread: Some(accept_thread) })
}

fn serve_connection(node: &Node, stream: TcpStream) {
    let mut writer = match stream.try_clone() {
        Ok(w) => w,
        Err(_) => return,
    };
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let Ok(line) = line else { return };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let reply = handle_line(node, line);
        if writer
            .write_all(reply.render().as_bytes())
            .and_then(|_| writer.flush())
            .is_err()
        {
            return;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_the_command_set() {
        assert_eq!(
            parse_command("SET-PERIOD vs1 w1 50"),
            Ok(ControlCommand::SetPeriod {
                vs: "vs1".into(),
                wrapper: "w1".into(),
                ms: 50
            })
        );
        assert_eq!(
            parse_command("SET-MODE vs1 w1 CBPM"),
            Ok(ControlCommand::SetMode {
                vs: "vs1".into(),
                wrapper: "w1".into(),
                mode: ProductionMode::ChangeBased
            })
        );
        assert_eq!(
            parse_command("GET-METRICS vs1 w1"),
            Ok(ControlCommand::GetMetrics { vs: "vs1".into(), wrapper: "w1".into() })
        );
        assert_eq!(parse_command("LIST"), Ok(ControlCommand::ListWrappers));
        assert!(parse_command("SET-PERIOD vs1 w1 fast").is_err());
        assert!(parse_command("SET-MODE vs1 w1 TURBO").is_err());
        assert!(parse_command("FROB x").is_err());
        assert!(parse_command("").is_err());
    }

    #[test]
    fn metrics_line_contains_period_and_mode() {
        let m = WrapperMetrics {
            name: "w1".into(),
            mode: ProductionMode::Periodic,
            update_period_ms: 100,
            ticks: 11,
            emissions: 11,
            suppressed: 0,
            bad_quality_ticks: 0,
            missed_ticks: 0,
            overruns: 0,
            mean_production_period_ms: Some(100.0),
            mean_read_latency_ms: None,
        };
        let line = format_metrics(&m);
        assert!(line.contains("mode=PPM"));
        assert!(line.contains("period-ms=100"));
        assert!(line.contains("mean-production-period-ms=100.000"));
        assert!(!line.contains("mean-read-latency"));
        assert!(!line.contains('\n'));
    }

    #[test]
    fn replies_render_as_lines() {
        assert_eq!(ControlReply::Ok.render(), "OK\n");
        assert_eq!(ControlReply::Err("unknown-target".into()).render(), "ERR unknown-target\n");
        assert_eq!(
            ControlReply::Listing(vec!["a".into(), "b".into()]).render(),
            "a\nb\n"
        );
        assert_eq!(ControlReply::Listing(vec![]).render(), "");
    }
}
