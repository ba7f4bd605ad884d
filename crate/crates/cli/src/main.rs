//! `plottag` command-line entry point.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use plottag::model::Variant;

#[derive(Parser)]
#[command(name = "plottag", version, about = "Tag prediction from movie plot synopses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write its checkpoint, run log and resolved config.
    Train(TrainArgs),
    /// Rank tags for new synopses with a trained checkpoint.
    Predict(PredictArgs),
    /// Score a checkpoint or a prediction file against corpus tags.
    Evaluate(EvaluateArgs),
    /// Score the most-frequent and random baselines.
    Baselines(BaselinesArgs),
    /// Per-tag recall changes and prediction overlap of two prediction files.
    Compare(CompareArgs),
    /// Export the emotion flow of a synopsis as CSV.
    EmotionFlow(EmotionFlowArgs),
}

#[derive(Args, serde::Serialize)]
pub struct TrainArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set train.lr=0.001`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Seeds both parameter initialization and training.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Where synopses to predict come from.
#[derive(Args, serde::Serialize)]
#[group(required = true, multiple = false)]
pub struct TextSource {
    /// A single synopsis.
    #[arg(long)]
    pub text: Option<String>,
    /// Plain-text file with one synopsis per non-empty line.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Corpus file; movies of `--split` are used.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
}

#[derive(Args, serde::Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub source: TextSource,
    #[arg(long, default_value = "csv")]
    pub corpus_format: String,
    #[arg(long, default_value = "test")]
    pub split: SplitArg,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Fail unless the checkpoint holds this variant.
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Output TSV file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Args, serde::Serialize)]
pub struct EvaluateArgs {
    #[arg(long, required_unless_present = "predictions", conflicts_with = "predictions")]
    pub checkpoint: Option<PathBuf>,
    /// Prediction TSV to score instead of running a checkpoint.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "csv")]
    pub corpus_format: String,
    #[arg(long, default_value = "test")]
    pub split: SplitArg,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "3,5,10")]
    pub k: Vec<usize>,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, serde::Serialize)]
pub struct BaselinesArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "csv")]
    pub corpus_format: String,
    #[arg(long, value_delimiter = ',', default_value = "3,5,10")]
    pub k: Vec<usize>,
    /// First seed of the random baseline.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of random-baseline seeds to average.
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, serde::Serialize)]
pub struct CompareArgs {
    pub preds_a: PathBuf,
    pub preds_b: PathBuf,
    /// Corpus with ground truth, needed for per-tag recall deltas.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    pub corpus_format: String,
    /// Output JSON file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, serde::Serialize)]
pub struct EmotionFlowArgs {
    #[arg(long)]
    pub lexicon: PathBuf,
    #[arg(long, conflicts_with = "input", required_unless_present = "input")]
    pub text: Option<String>,
    /// File holding one synopsis.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = plottag::emotion::DEFAULT_SEGMENTS)]
    pub segments: usize,
    /// Output CSV file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A failed command, classified by exit code.
#[derive(Debug)]
pub enum Failure {
    /// Exit 1: bad flags or configuration.
    Config(String),
    /// Exit 2: unreadable or inconsistent input data.
    Data(String),
    /// Exit 3: numeric or output failure while running.
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Data(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Data(m) => write!(f, "data error: {m}"),
            Failure::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

/// Attaches the pipeline stage to a library error and classifies it.
pub trait Stage<T> {
    fn stage(self, name: &str) -> Result<T, Failure>;
}

impl<T> Stage<T> for plottag::Result<T> {
    fn stage(self, name: &str) -> Result<T, Failure> {
        use plottag::Error;
        self.map_err(|e| {
            let msg = format!("{name}: {e}");
            match e {
                Error::NonFiniteLoss { .. } | Error::Tensor(_) => Failure::Runtime(msg),
                _ => Failure::Data(msg),
            }
        })
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Baselines(a) => commands::baselines(a),
        Command::Compare(a) => commands::compare(a),
        Command::EmotionFlow(a) => commands::emotion_flow(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
