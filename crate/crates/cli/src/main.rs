//! `pnlss`: stage-by-stage identification pipeline. Each subcommand reads the
//! files of the previous stage from the output directory and writes its own
//! files plus a manifest.

mod config;
mod error;
mod manifest;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::PipelineConfig;
use crate::error::CliError;
use crate::stages::Context;

#[derive(Debug, Parser)]
#[command(name = "pnlss", version, about = "PNLSS identification pipeline")]
struct Cli {
    /// JSON pipeline configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: config `output_dir`, else `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; stages currently run single-threaded.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Write multisine, sweep and ramped-sine excitation records.
    Excite,
    /// Simulate the Van der Pol plant on every excitation record.
    Vdp,
    /// Map the lock-in region of the Van der Pol plant.
    Lockin,
    /// Nonparametric best linear approximation from the multisine records.
    Bla,
    /// Parametric linear model from the BLA.
    FitLinear,
    /// Subset-iteration training of the PNLSS model.
    Train,
    /// Simulate a model on held-out or supplied inputs.
    Simulate,
    /// Single-sine validation suite.
    Validate,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if cli.threads == 0 {
        return Err(CliError::Contract("--threads must be at least 1".into()));
    }
    if cli.threads > 1 {
        log::debug!("--threads {} ignored: stages run single-threaded", cli.threads);
    }
    let out = cli
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out)?;
    let ctx = Context {
        seed: cli.seed.unwrap_or(config.rng_seed),
        config,
        out,
    };
    match cli.command {
        Command::Excite => stages::excite(&ctx),
        Command::Vdp => stages::vdp(&ctx),
        Command::Lockin => stages::lockin(&ctx),
        Command::Bla => stages::bla(&ctx),
        Command::FitLinear => stages::fit_linear(&ctx),
        Command::Train => stages::train(&ctx),
        Command::Simulate => stages::simulate(&ctx),
        Command::Validate => stages::validate(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
