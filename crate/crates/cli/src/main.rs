//! `selssm`: corpus generation, training, evaluation, prediction,
//! quantization and gradient checking for the selective SSM classifier.

mod commands;
mod config;
mod fail;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "selssm", version, about = "Selective state-space text classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic report corpus.
    GenCorpus(GenCorpusArgs),
    /// Split a corpus, build the vocabulary and train a classifier.
    Train(TrainArgs),
    /// Metrics and one-vs-rest ROC curves on a split.
    Eval(EvalArgs),
    /// Classify free text.
    Predict(PredictArgs),
    /// Write an int8 copy of a checkpoint and report its footprint.
    Quantize(QuantizeArgs),
    /// Compare analytic and finite-difference gradients of a one-block model.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PresetArg {
    Dvt,
    Pe,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PoolingArg {
    Mean,
    Last,
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    #[arg(long, value_enum)]
    pub preset: PresetArg,
    /// Number of documents (preset default when omitted).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output JSONL file; provenance goes to `<out>.meta.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Fraction of positive documents with their evidence after word 500.
    #[arg(long)]
    pub evidence_frac: Option<f64>,
    /// Fraction of documents longer than 600 words.
    #[arg(long)]
    pub tail_frac: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Output directory (overrides the config file and the environment).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub max_seq_len: Option<usize>,
    #[arg(long, value_enum)]
    pub pooling: Option<PoolingArg>,
    /// No per-epoch progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint; `vocab.tsv` and `splits.json` are read from its directory.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "test", value_parser = ["train", "val", "test", "all"])]
    pub split: String,
    /// Report directory; defaults to the checkpoint's directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replace model predictions with the true labels.
    #[arg(long, hide = true)]
    pub oracle_predictions: bool,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false, id = "input")]
pub struct PredictInput {
    #[arg(long)]
    pub text: Option<String>,
    /// One document per non-empty line.
    #[arg(long)]
    pub file: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub input: PredictInput,
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also print the footprint of a hypothetical model of this many parameters.
    #[arg(long)]
    pub reference_params: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Run config whose `[model]` section is used (with one block).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 12)]
    pub seq_len: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = selssm::model::gradcheck::DEFAULT_TOLERANCE)]
    pub tolerance: f64,
    /// Perturb one analytic gradient (negative control).
    #[arg(long, hide = true)]
    pub corrupt_backward: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenCorpus(a) => commands::gen_corpus(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Predict(a) => commands::predict(a),
        Command::Quantize(a) => commands::quantize(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
