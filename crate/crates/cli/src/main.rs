//! `foresthash`: train random-forest hash functions, aggregate per-tree code
//! blocks into a target-length hash, encode datasets to packed code files,
//! and evaluate Hamming-radius retrieval.
//!
//! Exit codes: 0 success, 1 data/runtime error, 2 usage error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "foresthash", version, about = "Random-forest hashing with MI code aggregation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a forest, aggregate code blocks, write a model file.
    Train(TrainArgs),
    /// Re-aggregate an existing model at a new code length without retraining.
    Reselect(ReselectArgs),
    /// Encode a dataset into a packed code file.
    Encode(EncodeArgs),
    /// Precision/recall of a query code file against a database code file.
    Eval(EvalArgs),
    /// Mean per-sample encoding time of a model on a dataset.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Auto,
    Idx,
    Csv,
    Raw,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitterArg {
    Stump,
    Subspace,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Mi,
    Random,
}

#[derive(Args)]
pub struct DataArgs {
    /// Feature file (IDX images, CSV, or raw f32le).
    #[arg(long)]
    data: PathBuf,
    /// IDX label file (idx format only).
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Zero-based CSV column holding integer class labels.
    #[arg(long)]
    label_column: Option<usize>,
    /// Descriptor file for raw data (`N=..,D=..,dtype=f32le`).
    #[arg(long)]
    descriptor: Option<PathBuf>,
    /// Input format; `auto` infers from the descriptor/extension.
    #[arg(long, value_enum, default_value = "auto")]
    format: FormatArg,
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Number of trees M.
    #[arg(long, default_value_t = 64)]
    trees: usize,
    /// Tree depth d (levels including the root).
    #[arg(long, default_value_t = 3)]
    depth: u32,
    #[arg(long, value_enum, default_value = "subspace")]
    splitter: SplitterArg,
    /// Max principal components per subspace group.
    #[arg(long, default_value_t = 3)]
    rank: usize,
    /// Per-tree sample fraction in (0, 1].
    #[arg(long, default_value_t = 0.5)]
    sample_fraction: f64,
    /// Random stump candidates per node.
    #[arg(long, default_value_t = 100)]
    candidates: usize,
    /// Minimum samples for a node to split.
    #[arg(long, default_value_t = 4)]
    min_node: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Target hash length in bits.
    #[arg(long, default_value_t = 36)]
    bits: usize,
    /// Label-term weight in the aggregation objective.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, value_enum, default_value = "mi")]
    method: MethodArg,
    /// Fraction of samples (prefix) used for the block-block MI term.
    #[arg(long, default_value_t = 1.0)]
    mi_sample_split: f64,
    /// Worker threads (0 = auto); env FORESTHASH_THREADS is the fallback.
    #[arg(long)]
    threads: Option<usize>,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct ReselectArgs {
    /// Existing model file.
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 36)]
    bits: usize,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, value_enum, default_value = "mi")]
    method: MethodArg,
    #[arg(long, default_value_t = 1.0)]
    mi_sample_split: f64,
    /// Seed for random selection.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    threads: Option<usize>,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct EncodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    threads: Option<usize>,
    /// Output code file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Database code file (with labels).
    #[arg(long)]
    db: PathBuf,
    /// Query code file (with labels).
    #[arg(long)]
    queries: PathBuf,
    /// Hamming rejection radius.
    #[arg(long, default_value_t = 0)]
    radius: usize,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
pub struct BenchArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Timing repetitions.
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long)]
    threads: Option<usize>,
}

/// Errors carrying their process exit code.
pub enum CliError {
    /// Inconsistent or out-of-range flags: exit 2.
    Usage(String),
    /// Data or runtime failure: exit 1.
    Data(String),
}

impl From<foresthash_core::Error> for CliError {
    fn from(e: foresthash_core::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

fn init_threads(flag: Option<usize>) -> Result<(), CliError> {
    let n = match flag {
        Some(n) => n,
        None => match std::env::var("FORESTHASH_THREADS") {
            Ok(v) => v
                .parse::<usize>()
                .map_err(|_| CliError::Usage(format!("FORESTHASH_THREADS is not a number: {v:?}")))?,
            Err(_) => 0,
        },
    };
    // num_threads(0) means "choose automatically".
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Data(format!("thread pool init failed: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = match &cli.command {
        Command::Train(a) => a.threads,
        Command::Reselect(a) => a.threads,
        Command::Encode(a) => a.threads,
        Command::Eval(a) => a.threads,
        Command::Bench(a) => a.threads,
    };
    let result = init_threads(threads).and_then(|()| match cli.command {
        Command::Train(args) => commands::train(&args),
        Command::Reselect(args) => commands::reselect(&args),
        Command::Encode(args) => commands::encode(&args),
        Command::Eval(args) => commands::eval(&args),
        Command::Bench(args) => commands::bench(&args),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
