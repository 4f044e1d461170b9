//! The `dadg` command line: JSON game configs in, CSV and JSON artifacts out.
//!
//! Every command is a pure function of the config file and the seed, so
//! reruns reproduce their outputs byte for byte.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub mod commands;
pub mod config;

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] dadg_core::Error),

    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 2 for bad input, 3 for numerical failure, 1 for output trouble.
    pub fn exit_code(&self) -> u8 {
        use dadg_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Core(E::Io(_) | E::Csv(_)) => 1,
            CliError::Core(_) => 2,
            CliError::Io { .. } | CliError::Json(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "dadg", version, about = "Asset-defense differential games with costly observations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the Riccati equations; writes riccati_path.csv (and closed_form_check.csv for simple-motion games).
    Riccati(CommonArgs),
    /// Optimize observation schedules; writes schedules, residuals and cost sweeps.
    Optimize(CommonArgs),
    /// Monte Carlo rollouts; writes mc_summary.json and optional traces.
    Simulate(CommonArgs),
    /// Analytic vs Monte Carlo costs under empty, optimal and periodic schedules.
    Compare(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `output.directory`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides `simulation.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn execute(command: &Command) -> Result<Vec<PathBuf>, CliError> {
    let args = match command {
        Command::Riccati(a) | Command::Optimize(a) | Command::Simulate(a) | Command::Compare(a) => a,
    };
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.simulation.seed = seed;
    }
    let out = args.out.clone().unwrap_or_else(|| cfg.output.directory.clone());
    std::fs::create_dir_all(&out).map_err(|source| CliError::Io { path: out.clone(), source })?;
    match command {
        Command::Riccati(_) => commands::riccati(&cfg, &out),
        Command::Optimize(_) => commands::optimize(&cfg, &out),
        Command::Simulate(_) => commands::simulate(&cfg, &out),
        Command::Compare(_) => commands::compare(&cfg, &out),
    }
}

pub fn run(cli: Cli) -> ExitCode {
    match execute(&cli.command) {
        Ok(files) => {
            for f in files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
