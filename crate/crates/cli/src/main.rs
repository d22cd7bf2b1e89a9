//! `svelab`: batch driver for the splitting-scheme experiments.
//!
//! Exit codes: 0 when every check passes, 1 on a failed check or run error,
//! 2 on a configuration error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("run error: {0}")]
    Run(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) | CliError::Run(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "svelab", version, about = "Splitting-scheme laboratory for stochastic Volterra equations with jumps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Subcommand)]
enum Command {
    /// Complete-monotonicity and non-negativity checks of the kernel.
    KernelCheck(Flags),
    /// Simulate paths of the splitting scheme.
    Simulate(Flags),
    /// Coupled convergence table and Yamada–Watanabe checks.
    Converge(Flags),
    /// Riccati–Volterra Laplace transform with a Monte Carlo cross-check.
    Laplace(Flags),
    /// Monte Carlo check of the stable driver's Laplace transform.
    StableTest(Flags),
}

#[derive(Debug, Clone, clap::Args)]
struct Flags {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of available cores.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl Command {
    fn flags(&self) -> &Flags {
        match self {
            Command::KernelCheck(f) | Command::Simulate(f) | Command::Converge(f) | Command::Laplace(f) | Command::StableTest(f) => f,
        }
    }
}

fn run(command: &Command) -> Result<commands::Outcome, CliError> {
    let flags = command.flags();
    let mut cfg = RunConfig::load(&flags.config)?;
    if let Some(seed) = flags.seed {
        cfg.seed = seed;
    }
    if flags.threads == Some(0) {
        return Err(CliError::Config("--threads must be at least 1".into()));
    }
    commands::prepare_out(&flags.out)?;
    let out = flags.out.as_path();
    sve_core::exec::with_threads(flags.threads, || match command {
        Command::KernelCheck(_) => commands::kernel_check(&cfg, out),
        Command::Simulate(_) => commands::simulate(&cfg, out),
        Command::Converge(_) => commands::converge(&cfg, out),
        Command::Laplace(_) => commands::laplace(&cfg, out),
        Command::StableTest(_) => commands::stable_test(&cfg, out),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(o) => {
            println!("{} {}", if o.passed { "PASS" } else { "FAIL" }, o.message);
            ExitCode::from(if o.passed { 0 } else { 1 })
        }
        Err(e) => {
            eprintln!("svelab: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
