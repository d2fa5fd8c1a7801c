//! `corrector`: synthesize data, train, generate ensembles, evaluate and
//! report, all under one output directory.
//!
//! Exit codes: 0 on success, 2 for invalid input or configuration, 3 for
//! failures at run time (I/O, divergence, a locked output directory).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use crate::commands::Run;
use crate::config::ExperimentConfig;

/// An input or configuration problem the user has to fix.
#[derive(Debug)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

pub fn is_validation(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.downcast_ref::<Invalid>().is_some() || e.downcast_ref::<corrector_core::Error>().is_some_and(|e| e.is_validation())
    })
}

#[derive(Parser)]
#[command(name = "corrector", version, about = "Ensemble precipitation bias correction and super-resolution")]
struct Cli {
    /// JSON experiment config; unset keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override one config leaf, e.g. `--set training.stage1.epochs=2`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic paired dataset.
    SynthData,
    /// Train the configured mode and select the final checkpoint.
    Train {
        /// Continue from the saved training state.
        #[arg(long)]
        resume: bool,
        /// Stop after this many epochs; finish later with --resume.
        #[arg(long)]
        max_epochs: Option<usize>,
    },
    /// Sample ensembles for every patch of the configured split.
    Generate {
        /// Checkpoint manifest; defaults to the configured mode's final checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Ensemble size (defaults to evaluation.k).
        #[arg(long)]
        k: Option<usize>,
        /// Name of the ensemble set; defaults to the checkpoint's mode.
        #[arg(long)]
        name: Option<String>,
    },
    /// Score ensemble sets and the interpolation baseline.
    Evaluate {
        /// Ensemble sets to score; all of them when omitted.
        #[arg(long, value_delimiter = ',')]
        models: Vec<String>,
    },
    /// Summarize metrics and training curves.
    Report,
}

fn run(cli: Cli) -> Result<()> {
    let cfg = ExperimentConfig::load(cli.config.as_deref(), &cli.overrides)?;
    let run = Run::open(cfg, cli.out)?;
    match cli.command {
        Command::SynthData => commands::synth_data(&run),
        Command::Train { resume, max_epochs } => commands::train(&run, resume, max_epochs),
        Command::Generate { checkpoint, k, name } => commands::generate(&run, checkpoint, k, name),
        Command::Evaluate { models } => commands::evaluate(&run, models),
        Command::Report => commands::report(&run),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    corrector_core::netcore::enable_flush_to_zero();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_validation(&e) { 2 } else { 3 })
        }
    }
}
