//! End-to-end runs of the `opcbridge` binary: every subcommand at least
//! once, over real processes and sockets.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, Command, Stdio};
use std::time::Duration;

const BIN: &str = env!("CARGO_BIN_EXE_opcbridge");

struct KillOnDrop(Child);

impl Drop for KillOnDrop {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

/// Reads the child's stderr until a line containing `marker` appears and
/// returns that line.
fn wait_for_line(child: &mut Child, marker: &str) -> String {
    let stderr = child.stderr.take().expect("stderr piped");
    let mut reader = BufReader::new(stderr);
    let deadline = std::time::Instant::now() + Duration::from_secs(10);
    loop {
        assert!(std::time::Instant::now() < deadline, "no `{marker}` line from child");
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            std::thread::sleep(Duration::from_millis(20));
            continue;
        }
        if line.contains(marker) {
            return line;
        }
    }
}

fn addr_from(line: &str) -> String {
    line.rsplit(' ')
        .next()
        .map(|s| s.trim().to_owned())
        .expect("address at end of line")
}

#[test]
fn demo_default_scenario_prints_the_golden_log() {
    let out = Command::new(BIN).args(["demo", "--scenario", "default"]).output().unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(
        stdout,
        "t=500 ALARM_RAISED area=bath1\nt=500 CAMERA_FOCUSED area=bath1\n"
    );

    let out = Command::new(BIN).args(["demo", "--scenario", "arm-above"]).output().unwrap();
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
}

#[test]
fn serve_opc_missing_config_exits_one_naming_the_file() {
    let out = Command::new(BIN)
        .args(["serve-opc", "--config", "missing.txt"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.txt"));
}

#[test]
fn demo_with_bad_scenario_file_exits_one() {
    let out = Command::new(BIN)
        .args(["demo", "--scenario", "/nonexistent/scenario.toml"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn full_stack_serve_node_and_ctl() {
    let dir = tempfile::tempdir().unwrap();

    // OPC server on an ephemeral port.
    let server_cfg = dir.path().join("server.toml");
    std::fs::write(
        &server_cfg,
        r#"
listen-port = 0

[[item]]
name = "temp"
sampling-period-ms = 50
generator = { kind = "sine", amplitude = 1.0, period-ms = 1000, offset = 20.0 }
"#,
    )
    .unwrap();
    let mut server = KillOnDrop(
        Command::new(BIN)
            .args(["serve-opc", "--config"])
            .arg(&server_cfg)
            .stderr(Stdio::piped())
            .spawn()
            .unwrap(),
    );
    let opc_addr = addr_from(&wait_for_line(&mut server.0, "serving"));

    // Node watching a VS directory, control plane on an ephemeral port.
    let vs_dir = dir.path().join("vs");
    std::fs::create_dir(&vs_dir).unwrap();
    let mut node = KillOnDrop(
        Command::new(BIN)
            .args(["run-node", "--scan-period-ms", "100", "--control-port", "0", "--vs-dir"])
            .arg(&vs_dir)
            .stderr(Stdio::piped())
            .spawn()
            .unwrap(),
    );
    let ctl_addr = addr_from(&wait_for_line(&mut node.0, "control on"));
    let ctl_port = ctl_addr.rsplit(':').next().unwrap();

    let ctl = |args: &[&str]| {
        Command::new(BIN)
            .args(["ctl", "--port", ctl_port])
            .args(args)
            .output()
            .unwrap()
    };

    // No wrappers yet: LIST is empty but succeeds.
    let out = ctl(&["LIST"]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());

    // Deploy a VS polling the live server; wrappers appear in LIST.
    std::fs::write(
        vs_dir.join("vs1.vsd.xml"),
        format!(
            r#"<virtual-sensor name="vs1">
  <wrapper name="w1" kind="opc" server="{opc_addr}" items="temp"
           update-period-ms="50" mode="PPM" request="SELECT * FROM w1"/>
  <wrapper name="w2" kind="opc" server="{opc_addr}" items="temp"
           update-period-ms="100" mode="CBPM" request="SELECT * FROM w2"/>
  <global-request>SELECT AVG(temp) FROM w1</global-request>
  <window count="10"/>
  <processor id="forward"/>
  <output><field name="avg_temp" type="float64" description="rolling mean"/></output>
</virtual-sensor>
"#
        ),
    )
    .unwrap();

    let deadline = std::time::Instant::now() + Duration::from_secs(10);
    let listing = loop {
        let out = ctl(&["LIST"]);
        let text = String::from_utf8(out.stdout).unwrap();
        if text.lines().count() == 2 {
            break text;
        }
        assert!(std::time::Instant::now() < deadline, "LIST never showed 2 wrappers: {text}");
        std::thread::sleep(Duration::from_millis(50));
    };
    assert!(listing.lines().any(|l| l.starts_with("vs1 w1 ")), "{listing}");
    assert!(listing.lines().any(|l| l.starts_with("vs1 w2 ")), "{listing}");

    // Control a live wrapper and observe the change.
    let out = ctl(&["SET-PERIOD", "vs1", "w1", "25"]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout), "OK\n");
    let deadline = std::time::Instant::now() + Duration::from_secs(10);
    loop {
        let out = ctl(&["GET-METRICS", "vs1", "w1"]);
        let text = String::from_utf8(out.stdout).unwrap();
        if text.contains("period-ms=25") {
            assert!(text.contains("mode=PPM"), "{text}");
            break;
        }
        assert!(std::time::Instant::now() < deadline, "period change not visible: {text}");
        std::thread::sleep(Duration::from_millis(50));
    }

    // Unknown targets come back as ERR and a non-zero exit.
    let out = ctl(&["SET-PERIOD", "vs1", "nope", "50"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ERR unknown-target"));

    // The protocol is plain enough for a raw socket client too.
    let mut raw = std::net::TcpStream::connect(&ctl_addr).unwrap();
    raw.write_all(b"GET-METRICS vs1 w2\n").unwrap();
    raw.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    let mut line = String::new();
    BufReader::new(&raw).read_line(&mut line).unwrap();
    assert!(line.contains("mode=CBPM"), "{line}");
}
