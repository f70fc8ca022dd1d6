use std::io::{Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use opcbridge::client::TcpConnector;
use opcbridge::clock::{Clock, RealClock};
use opcbridge::demo;
use opcbridge::server::{tcp as opc_tcp, ServerConfig};
use opcbridge::sim::{priority, Spawner, ThreadSpawner};
use opcbridge::vsn::Node;
use opcbridge::{control, DEFAULT_CONTROL_PORT, DEFAULT_OPC_PORT};

#[derive(Parser)]
#[command(name = "opcbridge", version, about = "OPC-lite server, virtual-sensor node and tooling")]
struct Cli {
    /// error | warn | info | debug | trace (env OPCBRIDGE_LOG overrides)
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve items over OPC-lite from a config file
    ServeOpc {
        /// Server config (TOML, see docs/server-config.md)
        #[arg(long)]
        config: PathBuf,
        /// Override the configured listen port
        #[arg(long)]
        port: Option<u16>,
    },
    /// Host virtual sensors from a watched directory
    RunNode {
        /// Directory watched for *.vsd.xml files
        #[arg(long)]
        vs_dir: PathBuf,
        /// Deploy scan period in milliseconds
        #[arg(long, default_value_t = 1000)]
        scan_period_ms: u64,
        /// Control-plane listen port
        #[arg(long, default_value_t = DEFAULT_CONTROL_PORT)]
        control_port: u16,
    },
    /// Send one control command to a running node
    Ctl {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = DEFAULT_CONTROL_PORT)]
        port: u16,
        /// e.g. `SET-PERIOD vs1 w1 50`, `GET-METRICS vs1 w1`, `LIST`
        #[arg(required = true, trailing_var_arg = true)]
        command: Vec<String>,
    },
    /// Run the bundled error-detection demo on the simulated clock
    Demo {
        /// `default`, `arm-above`, or a scenario file path
        #[arg(long, default_value = "default")]
        scenario: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(&cli.log_level);
    match cli.command {
        Command::ServeOpc { config, port } => serve_opc(&config, port),
        Command::RunNode { vs_dir, scan_period_ms, control_port } => {
            run_node(&vs_dir, scan_period_ms, control_port)
        }
        Command::Ctl { host, port, command } => ctl(&host, port, &command.join(" ")),
        Command::Demo { scenario } => run_demo(&scenario),
    }
}

fn init_logging(flag_level: &str) {
    let level = std::env::var("OPCBRIDGE_LOG").unwrap_or_else(|_| flag_level.to_owned());
    env_logger::Builder::new()
        .parse_filters(&level)
        .format_timestamp_millis()
        .init();
}

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

fn serve_opc(config_path: &Path, port: Option<u16>) -> ExitCode {
    let text = match std::fs::read_to_string(config_path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read config {}: {e}", config_path.display());
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let config = match ServerConfig::from_toml(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("invalid config {}: {e}", config_path.display());
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match opc_tcp::start(&config, Arc::new(RealClock), port) {
        Ok(handle) => {
            eprintln!("serving {} items on {}", config.items.len(), handle.local_addr);
            loop {
                std::thread::park();
            }
        }
        Err(e) => {
            eprintln!("server failed to start: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn run_node(vs_dir: &Path, scan_period_ms: u64, control_port: u16) -> ExitCode {
    if !vs_dir.is_dir() {
        eprintln!("--vs-dir {} is not a directory", vs_dir.display());
        return ExitCode::from(EXIT_CONFIG);
    }
    if scan_period_ms < 1 {
        eprintln!("--scan-period-ms must be >= 1");
        return ExitCode::from(EXIT_CONFIG);
    }
    let clock = Arc::new(RealClock);
    let connector = Arc::new(TcpConnector::default());
    // camera_steer actuates against the default local OPC server.
    let registry =
        demo::demo_registry(connector.clone(), &format!("127.0.0.1:{DEFAULT_OPC_PORT}"));
    let spawner = Arc::new(ThreadSpawner::new(clock.clone()));
    let node = Node::new(registry, connector, clock.clone(), spawner.clone());

    let control = match control::serve_control(Arc::clone(&node), control_port) {
        Ok(h) => h,
        Err(e) => {
            eprintln!("control plane failed to start: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    };
    eprintln!(
        "node watching {} (scan every {scan_period_ms} ms), control on {}",
        vs_dir.display(),
        control.local_addr
    );
    let scanner = node.deploy_scanner(vs_dir.to_owned(), scan_period_ms);
    spawner.spawn("deploy-scan", priority::DEPLOY, clock.now_ms(), Box::new(scanner));
    loop {
        std::thread::park();
    }
}

fn ctl(host: &str, port: u16, command: &str) -> ExitCode {
    let mut stream = match TcpStream::connect((host, port)) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("cannot reach node at {host}:{port}: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    };
    if let Err(e) = stream
        .write_all(format!("{command}\n").as_bytes())
        .and_then(|_| stream.shutdown(std::net::Shutdown::Write))
    {
        eprintln!("send failed: {e}");
        return ExitCode::from(EXIT_RUNTIME);
    }
    let mut response = String::new();
    if let Err(e) = stream.read_to_string(&mut response) {
        eprintln!("receive failed: {e}");
        return ExitCode::from(EXIT_RUNTIME);
    }
    print!("{response}");
    if response.starts_with("ERR ") {
        ExitCode::from(EXIT_RUNTIME)
    } else {
        ExitCode::SUCCESS
    }
}

fn run_demo(scenario: &str) -> ExitCode {
    let text = match scenario {
        "default" => demo::SCENARIO_DEFAULT.to_owned(),
        "arm-above" => demo::SCENARIO_ARM_ABOVE.to_owned(),
        path => match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("cannot read scenario {path}: {e}");
                return ExitCode::from(EXIT_CONFIG);
            }
        },
    };
    let script = match demo::ScenarioScript::from_toml(&text) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match demo::run_demo(&script) {
        Ok(log) => {
            print!("{}", demo::format_event_log(&log));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
