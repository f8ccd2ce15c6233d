//! `warpcal`: batch front end for elastic functional calibration.
//!
//! Pipelines chain four commands over one output directory:
//! `simulate` writes a synthetic study, `align` decomposes it into aligned
//! curves and warps, `calibrate` trains emulators and samples the posterior,
//! and `report` emits plot-ready summaries. Every command snapshots its
//! resolved configuration and is reproducible from the seed.

mod config;
mod stages;

use clap::{Args, Parser, Subcommand};
use config::{Mode, RunConfig};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "warpcal", version, about = "Elastic Bayesian calibration of functional outputs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a built-in synthetic study: design, runs, observation, truth.
    Simulate(StageArgs),
    /// Decompose the ensemble into aligned curves, warps, and shooting vectors.
    Align(StageArgs),
    /// Train emulators (or use the registered simulator) and run MCMC.
    Calibrate(StageArgs),
    /// Emit marginals, pair contours, predictive bands, and coverage.
    Report(StageArgs),
}

#[derive(Args)]
struct StageArgs {
    /// JSON configuration; command-line flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; each stage derives its own stream from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory shared by the pipeline (must exist).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Forward model for calibration.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Built-in synthetic study.
    #[arg(long)]
    example: Option<u8>,
}

fn resolve(args: &StageArgs) -> Result<RunConfig, stages::StageError> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)
            .map_err(|m| stages::StageError { code: 2, message: m })?,
        None => RunConfig::built_in(args.example),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = Some(out.clone());
    }
    if let Some(mode) = args.mode {
        cfg.mode = mode;
    }
    if let Some(example) = args.example {
        cfg.example = Some(example);
    }
    cfg.validate()
        .map_err(|m| stages::StageError { code: 2, message: m })?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let run = |args: &StageArgs, f: fn(&RunConfig) -> Result<(), stages::StageError>| {
        resolve(args).and_then(|cfg| f(&cfg))
    };
    let outcome = match &cli.command {
        Command::Simulate(a) => run(a, stages::cmd_simulate),
        Command::Align(a) => run(a, stages::cmd_align),
        Command::Calibrate(a) => run(a, stages::cmd_calibrate),
        Command::Report(a) => run(a, stages::cmd_report),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
