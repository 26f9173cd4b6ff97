use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lambdapm_cli::{init_tracing, sim_cmd};
use lambdapm_core::sim::Topology;

/// Synthetic fan scenarios run through edge and cloud. Exits 0 iff every
/// configured assertion passes.
#[derive(Parser)]
#[command(name = "sim", version)]
struct Cli {
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run scenario files; one metrics.csv row each.
    Run {
        #[arg(long, required = true)]
        scenario: Vec<PathBuf>,
        #[arg(long, default_value = "inproc")]
        topology: Topology,
        #[arg(long, default_value = "sim-out")]
        out: PathBuf,
    },
    /// Run the built-in demo scenario.
    Demo {
        #[arg(long, default_value = "inproc")]
        topology: Topology,
        #[arg(long, default_value = "sim-out")]
        out: PathBuf,
        /// Also run the zero-fault and drift presets.
        #[arg(long)]
        all: bool,
    },
    /// Print a preset scenario file (demo, zero-fault, drift).
    Export { name: String },
    /// Write scenario, cloud and edge configs plus a warm-start model for
    /// running `cloud serve` and `edge run` by hand.
    Setup {
        /// Preset name or scenario file.
        scenario: String,
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7700")]
        cloud_addr: String,
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
    let (scenarios, topology, out) = match command {
        Command::Export { name } => {
            println!("{}", sim_cmd::export(&name)?);
            return Ok(ExitCode::SUCCESS);
        }
        Command::Setup {
            scenario,
            dir,
            cloud_addr,
        } => {
            let cfg = match sim_cmd::preset(&scenario) {
                Ok(c) => c,
                Err(_) => sim_cmd::load_scenario(std::path::Path::new(&scenario))?,
            };
            let s = sim_cmd::setup(&cfg, &dir, &cloud_addr)?;
            println!("scenario {}", s.scenario.display());
            println!("cloud    {}", s.cloud.display());
            println!("edge     {}", s.edge.display());
            println!("model    {}", s.model.display());
            return Ok(ExitCode::SUCCESS);
        }
        Command::Run {
            scenario,
            topology,
            out,
        } => {
            let s = scenario.iter().map(|p| sim_cmd::load_scenario(p)).collect::<anyhow::Result<Vec<_>>>()?;
            (s, topology, out)
        }
        Command::Demo { topology, out, all } => {
            let names: &[&str] = if all { &["demo", "zero-fault", "drift"] } else { &["demo"] };
            let s = names.iter().map(|n| sim_cmd::preset(n)).collect::<anyhow::Result<Vec<_>>>()?;
            (s, topology, out)
        }
    };
    let report = sim_cmd::run(&scenarios, topology, &out)?;
    print!("{}", report.render());
    Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
