//! `ovrun`: generate buffer-overrun corpora, train the memory network,
//! evaluate it per level, and inspect what it learned.

mod commands;
mod settings;

use std::fmt;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use settings::SettingsOverride;

#[derive(Parser)]
#[command(
    name = "ovrun",
    version,
    about = "Buffer-overrun detection as question answering over source lines"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate labeled program corpora.
    Gen(GenArgs),
    /// Train the memory network on a corpus file.
    Train(TrainArgs),
    /// Evaluate checkpoints on test corpora, per level.
    Eval(EvalArgs),
    /// Print per-hop attention for one sample.
    Trace(TraceArgs),
    /// Export embedding tables and number-geometry matrices.
    ExportEmbeddings(ExportArgs),
}

#[derive(clap::Args)]
struct GenArgs {
    /// Difficulty level 1-4.
    #[arg(long, conflicts_with = "preset")]
    level: Option<u8>,
    /// Number of samples.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output corpus file (single corpus).
    #[arg(long, conflicts_with = "preset")]
    out: Option<PathBuf>,
    /// `paper`: one 10k level-4 training corpus plus four 1k test sets.
    #[arg(long)]
    preset: Option<String>,
    /// Output directory for --preset.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Target fraction of safe samples.
    #[arg(long, default_value_t = 0.5)]
    safe_ratio: f64,
    #[arg(long, default_value_t = 10)]
    max_entities: usize,
    #[arg(long, default_value_t = 4)]
    max_dummy_vars: usize,
    /// Smallest integer literal.
    #[arg(long, default_value_t = 1)]
    int_min: i64,
    /// Largest integer literal.
    #[arg(long, default_value_t = 100)]
    int_max: i64,
}

#[derive(clap::Args)]
struct TrainArgs {
    /// Training corpus produced by `ovrun gen`.
    #[arg(long)]
    corpus: PathBuf,
    /// Directory for checkpoints, vocabulary, log, and provenance.
    #[arg(long)]
    run_dir: PathBuf,
    /// TOML settings file (flags still win).
    #[arg(long)]
    config: Option<PathBuf>,
    /// `paper`: the reference protocol (d=32, 3 hops, memory 30, Adam 1e-2).
    #[arg(long)]
    preset: Option<String>,
    #[command(flatten)]
    overrides: SettingsOverride,
}

#[derive(clap::Args)]
struct EvalArgs {
    /// Run directory written by `ovrun train`.
    #[arg(long)]
    run_dir: PathBuf,
    /// Test corpus files.
    #[arg(long)]
    test: Vec<PathBuf>,
    /// Comma-separated levels; expects test_level<N>.jsonl under --test-dir.
    #[arg(long, value_delimiter = ',')]
    levels: Vec<u8>,
    /// Directory holding test_level<N>.jsonl files (with --levels).
    #[arg(long)]
    test_dir: Option<PathBuf>,
    /// Print the published reference row next to measured scores.
    #[arg(long)]
    compare_paper: bool,
    /// Mask empty memory slots (defaults to the run's training setting).
    #[arg(long)]
    mask: Option<bool>,
}

#[derive(clap::Args)]
struct TraceArgs {
    /// Checkpoint file.
    #[arg(long)]
    ckpt: PathBuf,
    /// Vocabulary file from the training run.
    #[arg(long)]
    vocab: PathBuf,
    /// Corpus file to pick the sample from.
    #[arg(long)]
    corpus: PathBuf,
    /// Zero-based index into the corpus.
    #[arg(long)]
    sample_id: usize,
    #[arg(long)]
    mask: bool,
    /// Also write the rendered trace to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct ExportArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Which embedding table to export.
    #[arg(long, default_value = "addr", value_parser = ["addr", "val"])]
    table: String,
    /// Restrict the embedding export to integer tokens, ascending.
    #[arg(long)]
    numeric_only: bool,
}

/// Failure classes with distinct exit codes: configuration errors exit 2,
/// data/I-O errors exit 3, numeric failures exit 4.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
            Failure::Numeric(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(msg) => write!(f, "configuration: {msg}"),
            Failure::Data(msg) => write!(f, "data: {msg}"),
            Failure::Numeric(msg) => write!(f, "numeric: {msg}"),
        }
    }
}

impl From<ovrun_core::corpus::CorpusError> for Failure {
    fn from(e: ovrun_core::corpus::CorpusError) -> Self {
        use ovrun_core::corpus::CorpusError::*;
        match e {
            InvalidConfig(_) | InvalidLevel(_) => Failure::Config(e.to_string()),
            Io(_) | Malformed { .. } => Failure::Data(e.to_string()),
        }
    }
}

impl From<ovrun_core::encoding::EncodeError> for Failure {
    fn from(e: ovrun_core::encoding::EncodeError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<ovrun_core::model::ModelError> for Failure {
    fn from(e: ovrun_core::model::ModelError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<ovrun_core::training::TrainError> for Failure {
    fn from(e: ovrun_core::training::TrainError) -> Self {
        use ovrun_core::training::TrainError::*;
        match e {
            InvalidConfig(_) => Failure::Config(e.to_string()),
            EmptyDataset | Model(_) => Failure::Data(e.to_string()),
            NonFinite(_) => Failure::Numeric(e.to_string()),
        }
    }
}

impl From<ovrun_core::metrics::EvalError> for Failure {
    fn from(e: ovrun_core::metrics::EvalError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<ovrun_core::introspect::IntrospectError> for Failure {
    fn from(e: ovrun_core::introspect::IntrospectError) -> Self {
        Failure::Data(e.to_string())
    }
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(args) => commands::gen(args),
        Command::Train(args) => commands::train(args),
        Command::Eval(args) => commands::eval(args),
        Command::Trace(args) => commands::trace(args),
        Command::ExportEmbeddings(args) => commands::export_embeddings(args),
    };
    if let Err(failure) = result {
        eprintln!("error: {failure}");
        std::process::exit(failure.exit_code());
    }
}
