//! `mcflow`: preprocess, fit-prior, train, sample, evaluate and inspect.
//!
//! Log verbosity follows `MCFLOW_LOG` (for example `MCFLOW_LOG=info`).
//! Exit codes: 0 success, 1 partial (quarantined or flagged records,
//! warnings), 2 fatal.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "mcflow", version, about = "Rigid-body flow matching for molecular crystals")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Decompose raw structures into rigid-body records.
    Preprocess(PreprocessArgs),
    /// Fit the lattice prior on the training split.
    FitPrior(FitPriorArgs),
    /// Train a model on the processed training split.
    Train(TrainArgs),
    /// Generate structures for processed targets.
    Sample(SampleArgs),
    /// Match predictions against references.
    Evaluate(EvaluateArgs),
    /// Summarize and check the records in a file.
    Inspect(InspectArgs),
}

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    /// Raw dataset (`paths.dataset`).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output directory (`paths.processed`).
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Descriptor sidecar (`paths.descriptors`).
    #[arg(long)]
    pub descriptors: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FitPriorArgs {
    /// Processed directory (`paths.processed`).
    #[arg(long)]
    pub processed: Option<PathBuf>,
    /// Output file (`paths.prior`).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Processed directory (`paths.processed`).
    #[arg(long)]
    pub processed: Option<PathBuf>,
    /// Checkpoint directory (`paths.checkpoints`).
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Prior file (`paths.prior`).
    #[arg(long)]
    pub prior: Option<PathBuf>,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Total steps (`train.steps`).
    #[arg(long)]
    pub steps: Option<usize>,
    /// `train.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    /// `paths.checkpoint`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Processed directory holding the targets (`paths.processed`).
    #[arg(long)]
    pub processed: Option<PathBuf>,
    /// Output directory (`paths.samples`).
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Sample only these target ids.
    #[arg(long = "id")]
    pub ids: Vec<String>,
    /// `sample.split`; `all` selects every record.
    #[arg(long)]
    pub split: Option<String>,
    /// Override the number of molecules per cell (default: the target's Z).
    #[arg(long)]
    pub z: Option<usize>,
    /// χ pattern: `target`, `uniform` or `mixed`.
    #[arg(long, default_value = "target")]
    pub chi: String,
    #[arg(long)]
    pub n_samples: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub s_uf: Option<f64>,
    #[arg(long)]
    pub s_ur: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Largest accepted ellipsoid overlap.
    #[arg(long, conflicts_with = "no_overlap_filter")]
    pub overlap_threshold: Option<f64>,
    #[arg(long)]
    pub no_overlap_filter: bool,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Samples, dataset or processed file with the predictions.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Dataset or processed file with the references.
    #[arg(long)]
    pub references: PathBuf,
    /// Output directory (`paths.evaluation`).
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Only references of this split.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub stol: Option<f64>,
    #[arg(long)]
    pub ltol: Option<f64>,
    #[arg(long)]
    pub atol: Option<f64>,
    /// Also report every stol of `evaluate.sweep_grid`.
    #[arg(long)]
    pub sweep: bool,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    /// Dataset, processed, samples or extended-XYZ file.
    pub file: PathBuf,
}

/// How a command finished.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Complete,
    Partial,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MCFLOW_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = config::RunConfig::load(cli.config.as_deref()).and_then(|cfg| match cli.command {
        Command::Preprocess(a) => commands::preprocess(cfg, a),
        Command::FitPrior(a) => commands::fit_prior(cfg, a),
        Command::Train(a) => commands::train(cfg, a),
        Command::Sample(a) => commands::sample(cfg, a),
        Command::Evaluate(a) => commands::evaluate(cfg, a),
        Command::Inspect(a) => commands::inspect(a),
    });
    match result {
        Ok(Outcome::Complete) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
