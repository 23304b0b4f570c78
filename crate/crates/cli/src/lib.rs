//! Command-line driver for `sdde-core`.

pub mod commands;
pub mod config;
mod svg;

use std::fs;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::CliError;
use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "sdde", version, about = "Truncated θ-Milstein runs for stochastic delay equations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Common {
    /// Configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the seed from the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long, env = "SDDE_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// One trajectory at the step `dt` from [scheme]; writes trajectory.csv.
    Simulate(Common),
    /// Strong-error study from [study]; writes errors.csv and rate.svg.
    Convergence(Common),
    /// Assumption probes from the [probe] sections; writes probe.csv.
    Probe(Common),
}

/// Runs a parsed command and returns the text to print on success.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let (Command::Simulate(c) | Command::Convergence(c) | Command::Probe(c)) = &cli.command;
    let text = fs::read_to_string(&c.config).map_err(|e| {
        CliError::Config(config::ConfigError {
            line: 0,
            message: format!("cannot read {}: {e}", c.config.display()),
        })
    })?;
    let mut cfg = RunConfig::parse(&text)?;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
        if let Some(plan) = cfg.study.as_mut() {
            plan.seed = seed;
        }
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = c.threads {
        if n == 0 {
            return Err(CliError::Config(config::ConfigError {
                line: 0,
                message: "--threads must be at least 1".into(),
            }));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Io(std::io::Error::other(e.to_string())))?;
    pool.install(|| match &cli.command {
        Command::Simulate(c) => commands::cmd_simulate(&cfg, &c.out),
        Command::Convergence(c) => commands::cmd_convergence(&cfg, &c.out),
        Command::Probe(c) => commands::cmd_probe(&cfg, &c.out),
    })
}
