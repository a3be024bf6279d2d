use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sbfr_cli::config::Command;
use sbfr_cli::run::configure_threads;

#[derive(Parser)]
#[command(
    name = "sbfr",
    version,
    about = "Schrödinger bridge estimation from simulated paths"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Estimate the Schrödinger potentials by fixed-point iteration.
    Solve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Estimate a finite-dimensional expectation of the Schrödinger process.
    Fdd {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a convergence study and write a CSV.
    Study {
        #[arg(long)]
        config: PathBuf,
    },
    /// Solve the discretized system exactly and optionally compare.
    Oracle {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (expected, path) = match cli.command {
        Cmd::Solve { config } => (Command::Solve, config),
        Cmd::Fdd { config } => (Command::Fdd, config),
        Cmd::Study { config } => (Command::Study, config),
        Cmd::Oracle { config } => (Command::Oracle, config),
    };
    let text = match std::fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            return ExitCode::from(2);
        }
    };
    let cfg = match sbfr_cli::parse_config(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            return ExitCode::from(2);
        }
    };
    if cfg.command != expected {
        eprintln!(
            "error: {}: config is for '{}', not '{}'",
            path.display(),
            cfg.command.name(),
            expected.name()
        );
        return ExitCode::from(2);
    }
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    ExitCode::from(sbfr_cli::execute(&cfg) as u8)
}
