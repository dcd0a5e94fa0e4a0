use std::net::{Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

use tactile_hand::interface::{self, export, ExportFormat, LiveServer, ServeOptions, SessionConfig};
use tactile_hand::trials::scenario;
use tactile_hand::Condition;

/// Environment variable holding the log filter, e.g. `info` or `tactile_hand=debug`.
const LOG_ENV: &str = "TACTILE_HAND_LOG";

#[derive(Parser)]
#[command(name = "tactile-hand", version, about = "Myoelectric hand control stack and grasp simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioKind {
    PickAndPlace,
    OverGrasp,
    AntiSlip,
}

#[derive(Subcommand)]
enum Command {
    /// Run scripted scenarios headless and write trial logs and a session summary.
    Run {
        #[arg(long = "scenario", required = true, num_args = 1..)]
        scenarios: Vec<PathBuf>,
        /// `standard` or `tactile`; defaults to the config's condition.
        #[arg(long)]
        condition: Option<Condition>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Serve live sessions over WebSocket.
    Serve {
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long)]
        condition: Option<Condition>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for live trial logs.
        #[arg(long, default_value = "live_logs")]
        out: PathBuf,
        /// Listen on all interfaces instead of localhost.
        #[arg(long)]
        public: bool,
    },
    /// Export a trial trace as an aligned CSV or an SVG plot.
    Export {
        #[arg(long)]
        trial: PathBuf,
        /// `csv` or `svg`.
        #[arg(long, default_value = "csv")]
        format: ExportFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write generated scenario files.
    Scenarios {
        #[arg(long, value_enum)]
        kind: ScenarioKind,
        #[arg(long, default_value_t = 1)]
        count: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>, condition: Option<Condition>) -> Result<SessionConfig, String> {
    let mut cfg = match path {
        Some(p) => SessionConfig::load(p).map_err(|e| e.to_string())?,
        None => SessionConfig::default(),
    };
    if let Some(c) = condition {
        cfg.condition = c;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    match cli.command {
        Command::Run {
            scenarios,
            condition,
            seed,
            out,
            config,
        } => {
            let cfg = load_config(config.as_deref(), condition)?;
            let report =
                interface::run_batch(&scenarios, &cfg, cfg.condition, seed, &out).map_err(|e| e.to_string())?;
            for r in &report.records {
                println!(
                    "{}\t{}\tscore={:.3}\ttime_remaining={:.3}",
                    r.trial_id,
                    r.outcome.as_str(),
                    r.score.value(),
                    r.time_remaining
                );
            }
            if report.aborted > 0 {
                eprintln!("{} trial(s) aborted", report.aborted);
            }
            Ok(ExitCode::from(report.exit_code() as u8))
        }
        Command::Serve {
            port,
            condition,
            config,
            out,
            public,
        } => {
            let cfg = load_config(config.as_deref(), condition)?;
            let ip = if public { Ipv4Addr::UNSPECIFIED } else { Ipv4Addr::LOCALHOST };
            let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
            rt.block_on(async {
                let options = ServeOptions {
                    out_dir: Some(out),
                    ..ServeOptions::default()
                };
                let server = LiveServer::bind(SocketAddr::from((ip, port)), cfg, options)
                    .await
                    .map_err(|e| e.to_string())?;
                let addr = server.local_addr().map_err(|e| e.to_string())?;
                tracing::info!(%addr, "listening");
                eprintln!("listening on ws://{addr}");
                server.run().await.map_err(|e| e.to_string())
            })?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Export { trial, format, out } => {
            let written = export::export_trial(&trial, format, out.as_deref()).map_err(|e| e.to_string())?;
            println!("{}", written.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Scenarios { kind, count, seed, out } => {
            std::fs::create_dir_all(&out).map_err(|e| format!("{}: {e}", out.display()))?;
            for k in 0..count {
                let s = seed + k;
                let sc = match kind {
                    ScenarioKind::PickAndPlace => scenario::pick_and_place(s),
                    ScenarioKind::OverGrasp => scenario::aggressive_off_center_close(s),
                    ScenarioKind::AntiSlip => scenario::anti_slip(s),
                };
                let path = out.join(format!("{}.json", sc.name));
                std::fs::write(&path, sc.to_json_pretty()).map_err(|e| format!("{}: {e}", path.display()))?;
                println!("{}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env(LOG_ENV).unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
