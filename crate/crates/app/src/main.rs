use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use bridge_app::config::{AppConfig, Overrides};
use bridge_app::runtime::{self, SourceMode};
use bridge_app::stats::write_line;
use traffic_bridge::mock::{MockOptions, MockServer, Scenario};

#[derive(Parser)]
#[command(name = "bridge", version, about = "Couples a TraCI traffic server to a scene and an OSC stream")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

impl Common {
    fn load(&self) -> anyhow::Result<AppConfig> {
        AppConfig::layered(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Args)]
struct RunOpts {
    /// Stop after this many seconds
    #[arg(long)]
    duration: Option<f64>,
    /// Write stats lines to this file instead of stdout
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the bridge against a TraCI server
    Run {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Run the bridge and record every step to a replay file
    Capture {
        /// Capture file to write
        #[arg(long, short)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Drive the bridge from a capture file, without a server
    Replay {
        /// Capture file to play
        capture: PathBuf,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Parse a network file and report what would be spawned
    CheckNet {
        /// SUMO .net.xml file
        net: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Print JSON instead of text
        #[arg(long)]
        json: bool,
    },
    /// Serve a scenario over TraCI as a stand-in for SUMO
    MockServer {
        /// Scenario TOML file
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8813")]
        bind: String,
        /// Stop after this many seconds
        #[arg(long)]
        duration: Option<f64>,
        /// Drop each connection after this many messages
        #[arg(long)]
        close_after: Option<u64>,
    },
    /// Print the effective configuration as TOML
    ShowConfig {
        #[command(flatten)]
        common: Common,
    },
}

fn stop_on_interrupt() -> anyhow::Result<Arc<AtomicBool>> {
    let flag = Arc::new(AtomicBool::new(false));
    let f = Arc::clone(&flag);
    ctrlc::set_handler(move || f.store(true, Ordering::SeqCst)).context("installing interrupt handler")?;
    Ok(flag)
}

fn run_bridge(common: &Common, opts: &RunOpts, mode: SourceMode) -> anyhow::Result<ExitCode> {
    let config = common.load()?;
    let sink: Box<dyn Write + Send> = match &opts.stats {
        Some(path) => Box::new(File::create(path).with_context(|| format!("creating {}", path.display()))?),
        None => Box::new(std::io::stdout()),
    };
    let duration = opts.duration.map(Duration::from_secs_f64);
    let interrupted = stop_on_interrupt()?;
    let bridge = runtime::start(config, mode, duration, sink)?;
    let stop = bridge.stop_flag();
    let watcher = std::thread::spawn(move || {
        while !interrupted.load(Ordering::SeqCst) {
            std::thread::sleep(Duration::from_millis(50));
        }
        stop.store(true, Ordering::SeqCst);
    });
    drop(watcher);
    let summary = bridge.wait()?;
    write_line(&mut std::io::stderr(), &summary);
    if let runtime::ExitReason::ProducerLost(msg) = &summary.exit {
        eprintln!("error: traffic source lost: {msg}");
    }
    Ok(ExitCode::from(summary.exit_code() as u8))
}

fn mock_server(scenario: &Path, bind: &str, duration: Option<f64>, close_after: Option<u64>) -> anyhow::Result<ExitCode> {
    let scenario = Scenario::load(scenario).with_context(|| format!("loading scenario {}", scenario.display()))?;
    let server = MockServer::start_with(scenario, bind, MockOptions { close_after_messages: close_after })?;
    println!("mock TraCI server listening on {}", server.addr());
    let interrupted = stop_on_interrupt()?;
    let started = Instant::now();
    while !interrupted.load(Ordering::SeqCst) && duration.is_none_or(|d| started.elapsed().as_secs_f64() < d) {
        std::thread::sleep(Duration::from_millis(50));
    }
    println!("served {} connections", server.connections());
    server.shutdown();
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { common, opts } => run_bridge(common, opts, SourceMode::Live),
        Command::Capture { out, common, opts } => run_bridge(common, opts, SourceMode::Capture(out.clone())),
        Command::Replay { capture, common, opts } => run_bridge(common, opts, SourceMode::Replay(capture.clone())),
        Command::CheckNet { net, common, json } => common.load().and_then(|config| {
            let report = bridge_app::check_net(net, &config)?;
            if *json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{report}");
            }
            Ok(ExitCode::SUCCESS)
        }),
        Command::MockServer { scenario, bind, duration, close_after } => {
            mock_server(scenario, bind, *duration, *close_after)
        }
        Command::ShowConfig { common } => common.load().map(|c| {
            print!("{}", c.to_toml());
            ExitCode::SUCCESS
        }),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
