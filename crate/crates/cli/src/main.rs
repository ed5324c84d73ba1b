//! `srnn`: train, evaluate, benchmark and verify sliced recurrent networks.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage or validation
//! errors.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use srnn_core::SrnnError;

#[derive(Debug, Parser, Serialize)]
#[command(name = "srnn", version, about = "Sliced recurrent neural networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum Command {
    /// Train on a `label<TAB>text` dataset and keep the best validation checkpoint.
    Train(TrainArgs),
    /// Accuracy of a checkpoint on one split of a dataset.
    Eval(EvalArgs),
    /// Wall-clock comparison of the sequential and sliced forward passes.
    Bench(BenchArgs),
    /// Check the linear-RNN equivalence construction.
    Verify(VerifyArgs),
    /// Print the per-layer slice geometry.
    SlicePlan(GeometryArgs),
    /// Print the analytic speed ratio and the implied speedup.
    PredictSpeed(GeometryArgs),
    /// Write the seeded synthetic keyword corpus as TSV.
    GenToy(GenToyArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct OutArgs {
    /// Directory for outputs and `manifest.json`.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long = "T", default_value_t = 512)]
    pub seq_len: usize,
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub batch: usize,
    #[arg(long, default_value_t = 50)]
    pub hidden: usize,
    #[arg(long, default_value_t = 200)]
    pub embed: usize,
    /// Vocabulary cap, not counting the padding and unknown ids.
    #[arg(long, default_value_t = 30_000)]
    pub vocab_size: usize,
    /// Whitespace-separated pretrained vectors, one word per line.
    #[arg(long)]
    pub vectors: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Rescale gradients to at most this global norm.
    #[arg(long)]
    pub clip: Option<f64>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Vocabulary dump; defaults to `vocab.tsv` beside the checkpoint.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Seed used to split the dataset at training time.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
pub enum Split {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchArgs {
    /// One or more sequence lengths.
    #[arg(long = "T", num_args = 1.., required = true)]
    pub seq_len: Vec<usize>,
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    /// One slice depth for all lengths, or one per length.
    #[arg(long, num_args = 1.., required = true)]
    pub k: Vec<usize>,
    /// Defaults to the number of available cores.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, default_value_t = 5)]
    pub trials: usize,
    #[arg(long, default_value_t = 1)]
    pub warmup: usize,
    #[arg(long, default_value_t = 50)]
    pub hidden: usize,
    #[arg(long, default_value_t = 50)]
    pub embed: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Emit one JSON object per row instead of the table.
    #[arg(long)]
    pub jsonl: bool,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyArgs {
    /// Restrict the suite to this slice number (requires --k).
    #[arg(long, requires = "k")]
    pub n: Option<usize>,
    #[arg(long, requires = "n")]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 50)]
    pub cases: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    /// Print the scalar two-block example instead of the random suite.
    #[arg(long)]
    pub scalar_demo: bool,
    /// Add this amount to one entry of the layer-0 recurrent matrix.
    #[arg(long)]
    pub perturb: Option<f64>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct GeometryArgs {
    #[arg(long = "T")]
    pub seq_len: usize,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub k: usize,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct GenToyArgs {
    /// Output TSV path.
    #[arg(long)]
    pub file: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub docs: usize,
    #[arg(long = "T", default_value_t = 64)]
    pub seq_len: usize,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] SrnnError),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(SrnnError::Argument(_) | SrnnError::Divisibility { .. }) => 2,
            CliError::Core(_) | CliError::Failed(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(SrnnError::Io(e))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
