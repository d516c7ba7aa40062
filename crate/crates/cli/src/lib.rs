//! Command-line front end: loads a run configuration, drives the estimation
//! pipeline and writes CSV, JSON and SVG artifacts into one output
//! directory.

pub mod commands;
pub mod config;
pub mod diagnostics;
pub mod report;
pub mod svg;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use config::{Overrides, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] rvf_core::Error),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Parser)]
#[command(name = "rvf", version, about = "Random vector field analysis of regional density panels")]
pub struct Cli {
    /// Echo informational messages to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-year dispersion and spatial autocorrelation statistics.
    Describe(RunArgs),
    /// Estimate the field over the window with bootstrap significance.
    Estimate(RunArgs),
    /// Grid search over (alpha, h) by forecast error.
    Tune(RunArgs),
    /// Trajectories, attractors and basin membership.
    Forecast(RunArgs),
    /// Field across a zone-partition change.
    DiagPartitionSwitch(RunArgs),
    /// Write a synthetic panel and a matching configuration.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Bootstrap replicates.
    #[arg(long = "B", short = 'B')]
    pub bootstrap: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Evaluation grid, e.g. `50x50`.
    #[arg(long, value_parser = config::parse_grid)]
    pub grid: Option<[usize; 2]>,
    /// Years, e.g. `1984:2019`.
    #[arg(long, value_parser = config::parse_window)]
    pub window: Option<[i32; 2]>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl RunArgs {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            h: self.h,
            alpha: self.alpha,
            bootstrap: self.bootstrap,
            seed: self.seed,
            grid: self.grid,
            window: self.window,
            out: self.out.clone(),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2019)]
    pub seed: u64,
    #[arg(long, default_value_t = 60)]
    pub zones: usize,
    /// Keep populations unchanged across the partition switch.
    #[arg(long)]
    pub freeze_switch: bool,
    /// Use one partition for all years.
    #[arg(long)]
    pub no_switch: bool,
}

/// Runs a parsed command line. Returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    diagnostics::install(cli.verbose);
    match cli.command {
        Command::Synth(a) => match commands::synth(&a) {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("error: {e}");
                1
            }
        },
        Command::Describe(a) => run_with_config(&a, "describe", commands::describe),
        Command::Estimate(a) => run_with_config(&a, "estimate", commands::estimate),
        Command::Tune(a) => run_with_config(&a, "tune", commands::tune),
        Command::Forecast(a) => run_with_config(&a, "forecast", commands::forecast),
        Command::DiagPartitionSwitch(a) => run_with_config(&a, "diag-partition-switch", commands::diag_partition_switch),
    }
}

fn run_with_config(args: &RunArgs, name: &str, f: fn(&RunConfig) -> Result<(), CliError>) -> i32 {
    let cfg = RunConfig::load(&args.config).map(|mut c| {
        c.apply(&args.overrides());
        c
    });
    let cfg = match cfg.and_then(|c| c.validate().map(|_| c)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let out = cfg.out_dir();
    if let Err(e) = std::fs::create_dir_all(&out) {
        eprintln!("error: cannot create {}: {e}", out.display());
        return 1;
    }
    let result = f(&cfg);
    let error = result.as_ref().err().map(|e| e.to_string());
    if let Err(e) = commands::write_diagnostics(&out, name, error.as_deref()) {
        eprintln!("error: writing diagnostics: {e}");
        return 1;
    }
    match error {
        None => 0,
        Some(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
