//! `dewater` — train, apply and score underwater image restoration models.
//!
//! Exit codes: 0 on success, 1 on a fatal error, 2 when the command
//! finished but emitted warnings (skipped files, unmatched stems, ...).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dewater_core::commands::{self, Outcome};
use dewater_core::config::{key_help, RunConfig};
use dewater_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "dewater",
    version,
    about = "Underwater image restoration: dataset prep, GAN training, inference, metrics and synthesis",
    after_help = key_help()
)]
struct Cli {
    /// Config file of `key = value` lines; defaults to $DGD_CONFIG if set.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override the config's master seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Override the config's output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scan a paired dataset, precompute targets and fill the sample cache
    PrepareData {
        /// Dataset root holding <category>/{underwater,reference}/ pairs
        #[arg(long, value_name = "DIR")]
        root: Option<PathBuf>,
        /// Cache directory (defaults to the config's cache_dir)
        #[arg(long, value_name = "DIR")]
        cache_dir: Option<PathBuf>,
    },
    /// Train the dual-generator model on a prepared cache
    Train {
        /// Continue from the config's checkpoint, or the newest one in the
        /// output directory
        #[arg(long)]
        resume: bool,
    },
    /// Restore an underwater image, or every image in a directory
    Dewater {
        /// Trained checkpoint (defaults to the config's checkpoint)
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        /// Image file or directory of images
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
    },
    /// Score predictions, against references when given
    Evaluate {
        /// Directory of predicted (restored) images
        #[arg(long, value_name = "DIR")]
        pred: PathBuf,
        /// Directory of reference images; omit for no-reference scoring
        #[arg(long, value_name = "DIR")]
        reference: Option<PathBuf>,
    },
    /// Degrade clean images through a parameterized water column
    Synthesize {
        /// Directory of clean source images
        #[arg(long, value_name = "DIR")]
        clean: PathBuf,
        /// Water parameter file (global keys plus optional [stem] sections)
        #[arg(long, value_name = "FILE")]
        params: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::from_env()?,
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = Some(out.clone());
    }
    Ok(cfg)
}

fn require(path: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    path.ok_or_else(|| Error::Config(format!("{what} is required (flag or config file)")))
}

fn run(cli: Cli) -> Result<Outcome> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::PrepareData { root, cache_dir } => {
            let root = require(root.or_else(|| cfg.root.clone()), "--root")?;
            let cache = require(cache_dir.or_else(|| cfg.cache_dir.clone()), "--cache-dir")?;
            let (_, outcome) = commands::cmd_prepare_data(&root, &cache, &cfg.pipeline_options())?;
            Ok(outcome)
        }
        Command::Train { resume } => {
            let (_, outcome) = commands::cmd_train(&cfg, resume)?;
            Ok(outcome)
        }
        Command::Dewater { checkpoint, input } => {
            let ckpt = require(checkpoint.or_else(|| cfg.checkpoint.clone()), "--checkpoint")?;
            let out = require(cfg.out_dir.clone(), "--out")?;
            let (_, outcome) = commands::cmd_dewater(&ckpt, &input, &out, cfg.seed)?;
            Ok(outcome)
        }
        Command::Evaluate { pred, reference } => {
            let out = require(cfg.out_dir.clone(), "--out")?;
            let (_, outcome) = commands::cmd_evaluate(&pred, reference.as_deref(), &out)?;
            Ok(outcome)
        }
        Command::Synthesize { clean, params } => {
            let out = require(cfg.out_dir.clone(), "--out")?;
            let (_, outcome) = commands::cmd_synthesize(&clean, &params, &out, cfg.seed)?;
            Ok(outcome)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(outcome) if outcome.warnings.is_empty() => ExitCode::SUCCESS,
        Ok(outcome) => {
            eprintln!("completed with {} warning(s)", outcome.warnings.len());
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
