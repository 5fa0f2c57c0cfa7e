//! Configuration-driven experiment runner.
//!
//! `kforq <forward|adjoint|gradcheck|optimize|twin|verify> [--config PATH]
//! [--out DIR] [--seed U64]`. Without `--config` the built-in default is used.
//! Exit codes: 0 success, 1 check failure, 2 config or usage error,
//! 3 numerical failure.

use std::io::Write;

pub mod config;
pub mod error;
pub mod output;
pub mod run;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::{default_config, ExperimentConfig};
use crate::error::CliError;
use crate::output::OutputDir;
use crate::run::{Context, Outcome};

#[derive(Debug, Parser)]
#[command(
    name = "kforq",
    version,
    about = "Forward, adjoint and optimal-control experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output` in the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Solve the state equation under the configured control.
    Forward,
    /// Solve the discrete adjoint at the configured control.
    Adjoint,
    /// Compare adjoint gradients with finite differences; Taylor test.
    Gradcheck,
    /// Minimize the tracking cost from zero control.
    Optimize,
    /// Recover a known control from its own state.
    Twin,
    /// Run the full battery of identity checks and estimates.
    Verify,
}

/// Effective config after applying the command-line overrides.
pub fn resolve_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => default_config(),
    };
    if let Some(dir) = &cli.out {
        cfg.output = dir.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

pub fn execute(command: Command, cfg: ExperimentConfig) -> Result<Outcome, CliError> {
    let ctx = Context::new(cfg)?;
    let mut out = OutputDir::create(&ctx.cfg.output, &ctx.hash)?;
    log::info!("config hash {}", ctx.hash);
    match command {
        Command::Forward => run::run_forward(&ctx, &mut out),
        Command::Adjoint => run::run_adjoint(&ctx, &mut out),
        Command::Gradcheck => run::run_gradcheck(&ctx, &mut out),
        Command::Optimize => run::run_optimize(&ctx, &mut out),
        Command::Twin => run::run_twin(&ctx, &mut out),
        Command::Verify => run::run_verify(&ctx, &mut out),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = resolve_config(&cli).and_then(|cfg| {
        let hash = cfg.hash();
        execute(cli.command, cfg).map(|o| (o, hash))
    });
    match result {
        Ok((outcome, hash)) => {
            // a closed pipe must not turn a finished run into a panic
            let mut out = std::io::stdout().lock();
            let _ =
                write!(out, "{}", outcome.text).and_then(|_| writeln!(out, "config_hash {hash}"));
            if outcome.passed {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("kforq: {e}");
            e.exit_code()
        }
    }
}
