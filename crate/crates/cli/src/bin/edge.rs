use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lambdapm_cli::edge_cmd::{self, Source};
use lambdapm_cli::init_tracing;

/// Edge agent: scores sensor windows locally and talks to the cloud.
#[derive(Parser)]
#[command(name = "edge", version)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stream samples through the speed layer.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Sample file (numbers separated by whitespace or commas), `-` for stdin.
        #[arg(long, default_value = "-", conflicts_with = "scenario")]
        input: PathBuf,
        /// Synthesize the samples from a scenario file instead.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Upload closed spool segments to the cloud.
    UploadBatch {
        #[arg(long)]
        config: PathBuf,
    },
    /// Show model and spool state.
    Status {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_tracing(cli.verbose);
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::Run {
            config,
            input,
            scenario,
        } => {
            let cfg = edge_cmd::load_config(Some(&config))?;
            let source = match scenario {
                Some(s) => Source::Scenario(s),
                None => Source::Samples(input),
            };
            let summary = edge_cmd::run(cfg, source)?;
            edge_cmd::print(&summary)?;
            if summary.pending_events > 0 {
                eprintln!("warning: {} anomaly events were not delivered", summary.pending_events);
                return Ok(ExitCode::from(1));
            }
        }
        Command::UploadBatch { config } => {
            let cfg = edge_cmd::load_config(Some(&config))?;
            let report = edge_cmd::upload_batch(cfg)?;
            edge_cmd::print(&report)?;
            if !report.is_complete() {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Status { config } => {
            let cfg = edge_cmd::load_config(config.as_deref())?;
            edge_cmd::print(&edge_cmd::status(&cfg)?)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}
