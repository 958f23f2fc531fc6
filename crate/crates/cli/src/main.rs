//! `locsvm`: train localized kernel models, audit their robustness, and run
//! synthetic experiments.
//!
//! Exit status: 0 success, 1 bound violation, 2 input error, 3 solver
//! non-convergence.

mod commands;
mod config;
mod dataset;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "locsvm",
    version,
    about = "Localized kernel learning with robustness audits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Maximum number of worker threads.
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a composed model; writes model.json and summary.txt.
    Train(Common),
    /// Audit a trained model; writes audit.json.
    Audit {
        #[command(flatten)]
        common: Common,
        /// Model written by `train`.
        #[arg(long)]
        model: PathBuf,
    },
    /// Run a consistency or trade-off experiment; writes CSV and JSON.
    Experiment(Common),
}

fn set_threads(threads: Option<usize>) -> CliResult<()> {
    let Some(n) = threads else { return Ok(()) };
    if n == 0 {
        return Err(CliError::Core(locsvm::Error::InvalidInput(
            "--threads must be positive".into(),
        )));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Core(locsvm::Error::InvalidInput(e.to_string())))?;
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(c) => {
            set_threads(c.threads)?;
            let cfg = config::load(&c.config, c.seed)?;
            print!("{}", commands::train(&cfg, &c.out)?);
        }
        Command::Audit { common: c, model } => {
            set_threads(c.threads)?;
            let cfg = config::load(&c.config, c.seed)?;
            let report = commands::audit(&cfg, &model, &c.out)?;
            print!("{}", commands::audit_summary(&report));
            if !report.all_satisfied() {
                return Err(CliError::Violation(format!(
                    "see {}",
                    c.out.join("audit.json").display()
                )));
            }
        }
        Command::Experiment(c) => {
            set_threads(c.threads)?;
            let cfg = config::load(&c.config, c.seed)?;
            print!("{}", commands::experiment(&cfg, &c.out)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
