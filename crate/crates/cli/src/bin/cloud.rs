use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lambdapm_cli::{cloud_cmd, init_tracing};

/// Maintenance cloud: protocol listener, HTTP API, batch layer.
#[derive(Parser)]
#[command(name = "cloud", version)]
struct Cli {
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve edges over TCP and operators over HTTP until Ctrl-C.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the protocol port (0 picks a free one).
        #[arg(long)]
        tcp_port: Option<u16>,
        /// Override the HTTP port (0 picks a free one).
        #[arg(long)]
        http_port: Option<u16>,
        /// Override the store directory.
        #[arg(long)]
        store_dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_tracing(cli.verbose);
    let Command::Serve {
        config,
        tcp_port,
        http_port,
        store_dir,
    } = cli.command;
    let result = cloud_cmd::load_config(config.as_deref()).and_then(|mut cfg| {
        if let Some(p) = tcp_port {
            cfg.tcp_port = p;
        }
        if let Some(p) = http_port {
            cfg.http_port = p;
        }
        if let Some(d) = store_dir {
            cfg.store_dir = d;
        }
        cloud_cmd::serve(cfg)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
