//! The `aerotext` command line: `prepare`, `train`, `evaluate`, `predict`.
//!
//! Exit codes: 0 success, 1 failure, 2 success with unmapped operators.

mod commands;
mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::models::Architecture;
use crate::textprep::{Truncation, DEFAULT_MAX_LEN, DEFAULT_MAX_VOCAB};
use crate::training::{OptimizerKind, SelectBy};

pub use commands::{cmd_evaluate, cmd_predict, cmd_prepare, cmd_train, PrepareOutcome};
pub use manifest::{sha256_hex, RunManifest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_UNMAPPED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "aerotext", version, about = "Operator-class classification of aviation accident narratives")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clean, annotate and split a raw CSV, fit the vocabulary.
    Prepare(PrepareArgs),
    /// Train one architecture on prepared data.
    Train(TrainArgs),
    /// Score a checkpoint on one split of prepared data.
    Evaluate(EvaluateArgs),
    /// Classify a single narrative.
    Predict(PredictArgs),
}

#[derive(Debug, Clone, Args)]
pub struct PrepareArgs {
    /// Raw accident CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// Operator mapping TSV (`pattern<TAB>class`), or `builtin` for the bundled starter mapping.
    #[arg(long)]
    pub mapping: PathBuf,
    /// Stopword list, one word per line. Defaults to the bundled English list.
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    #[arg(long, env = "AEROTEXT_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "Operator")]
    pub operator_column: String,
    #[arg(long, default_value = "Summary")]
    pub summary_column: String,
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    pub max_len: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_VOCAB)]
    pub max_vocab: usize,
    /// head or tail
    #[arg(long, default_value_t = Truncation::Head)]
    pub truncate: Truncation,
    /// Split each class 80/10/10 separately.
    #[arg(long)]
    pub stratify: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Directory written by `prepare`.
    #[arg(long)]
    pub data: PathBuf,
    /// cnn, srnn, lstm or blstm
    #[arg(long)]
    pub arch: Architecture,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, env = "AEROTEXT_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = OptimizerKind::Adam)]
    pub optimizer: OptimizerKind,
    #[arg(long, default_value_t = SelectBy::ValidationAccuracy)]
    pub select_best_by: SelectBy,
    #[arg(long, default_value_t = 100)]
    pub embedding_dim: usize,
    #[arg(long, default_value_t = 128)]
    pub hidden_units: usize,
    #[arg(long, default_value_t = 64)]
    pub head_units: usize,
    #[arg(long, default_value_t = 128)]
    pub filters: usize,
    #[arg(long, default_value_t = 5)]
    pub kernel: usize,
    #[arg(long, default_value_t = 0.0)]
    pub dropout: f64,
    /// Suppress per-epoch progress on standard error.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl SplitName {
    pub fn name(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Validation => "validation",
            SplitName::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitName::Test)]
    pub split: SplitName,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["text", "stdin"])))]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub text: Option<String>,
    /// Read the narrative from standard input.
    #[arg(long)]
    pub stdin: bool,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Errors are reported on standard error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_FAILURE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Prepare(a) => cmd_prepare(&a).map(|o| if o.unmapped > 0 { EXIT_UNMAPPED } else { EXIT_OK }),
        Command::Train(a) => cmd_train(&a).map(|_| EXIT_OK),
        Command::Evaluate(a) => cmd_evaluate(&a).map(|_| EXIT_OK),
        Command::Predict(a) => cmd_predict(&a).map(|_| EXIT_OK),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_FAILURE
        }
    }
}
