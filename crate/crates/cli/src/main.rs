mod commands;
mod config;
mod manifest;
mod preds;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::ConfigError;

#[derive(Parser, Debug)]
#[command(name = "groundalign", version, about = "Word translation through a shared grounding feature space")]
pub struct Cli {
    /// TOML config file; command-line flags override its values.
    #[arg(long, global = true, env = "GROUNDALIGN_CONFIG")]
    pub config: Option<PathBuf>,

    /// Worker threads for skip-gram training. More than one is faster but
    /// not reproducible.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Vocabulary construction.
    #[command(subcommand)]
    Vocab(VocabCmd),
    /// Skip-gram word embeddings.
    #[command(subcommand)]
    Embed(EmbedCmd),
    /// Grounded joint embedding model.
    #[command(subcommand)]
    Ground(GroundCmd),
    /// Cross-lingual linear maps.
    #[command(subcommand)]
    Align(AlignCmd),
    /// Ranked translations from a map or a grounding model.
    Translate(TranslateArgs),
    /// Metrics.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Reference baselines.
    #[command(subcommand)]
    Baseline(BaselineCmd),
    /// Synthetic grounded worlds.
    #[command(subcommand)]
    Synth(SynthCmd),
    /// Tabulates the metrics of finished runs.
    Report(ReportArgs),
}

#[derive(Subcommand, Debug)]
pub enum VocabCmd {
    Build {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        max_size: Option<usize>,
    },
}

#[derive(Subcommand, Debug)]
pub enum EmbedCmd {
    Train(EmbedTrainArgs),
}

#[derive(Args, Debug)]
pub struct EmbedTrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Vocabulary file; built from the corpus when absent.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Center and unit-normalize the trained vectors.
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Subcommand, Debug)]
pub enum GroundCmd {
    Train(GroundTrainArgs),
}

#[derive(Args, Debug)]
pub struct GroundTrainArgs {
    #[arg(long)]
    pub clips_x: PathBuf,
    #[arg(long)]
    pub clips_y: PathBuf,
    #[arg(long)]
    pub emb_x: PathBuf,
    #[arg(long)]
    pub emb_y: PathBuf,
    /// Checkpoint directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub ortho_weight: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EmbPair {
    #[arg(long)]
    pub emb_x: PathBuf,
    #[arg(long)]
    pub emb_y: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum AlignCmd {
    /// Procrustes on the dictionary pairs found in both vocabularies.
    Supervised {
        #[command(flatten)]
        emb: EmbPair,
        #[arg(long)]
        dict: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Procrustes between row-aligned embedding files.
    Procrustes {
        #[command(flatten)]
        emb: EmbPair,
        #[arg(long)]
        out: PathBuf,
    },
    /// Self-learning Procrustes with random restarts.
    Iterative {
        #[command(flatten)]
        emb: EmbPair,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        restarts: Option<usize>,
    },
    /// Refinement seeded by a checkpoint's AdaptLayer.
    Muve {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        emb: EmbPair,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        refine_iters: Option<usize>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum RetrievalArg {
    Cosine,
    Csls,
}

#[derive(Args, Debug)]
pub struct TranslateArgs {
    /// Linear map directory (needs --emb-x and --emb-y).
    #[arg(long, conflicts_with = "model", required_unless_present = "model")]
    pub map: Option<PathBuf>,
    /// Grounding checkpoint; translates through the joint space.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, requires = "map")]
    pub emb_x: Option<PathBuf>,
    #[arg(long, requires = "map")]
    pub emb_y: Option<PathBuf>,
    /// Query words, one per line.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Translate every source word of this dictionary.
    #[arg(long)]
    pub dict: Option<PathBuf>,
    #[arg(long)]
    pub word: Vec<String>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_enum, default_value_t = RetrievalArg::Csls)]
    pub retrieval: RetrievalArg,
    /// Predictions CSV; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum EvalCmd {
    Recall(RecallArgs),
    Dissimilarity(DissimilarityArgs),
}

#[derive(Args, Debug)]
pub struct RecallArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub dict: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 10])]
    pub n: Vec<usize>,
    /// Run directory for per-query CSVs and the manifest read by `report`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub method: Option<String>,
    /// Condition labels such as `data=0.1`.
    #[arg(long = "label", value_parser = parse_label)]
    pub labels: Vec<(String, String)>,
}

#[derive(Args, Debug)]
pub struct DissimilarityArgs {
    #[arg(long)]
    pub corpus_a: PathBuf,
    #[arg(long)]
    pub corpus_b: PathBuf,
    /// Aligned word pairs in the dictionary format.
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub smoothing: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long = "label", value_parser = parse_label)]
    pub labels: Vec<(String, String)>,
}

#[derive(Subcommand, Debug)]
pub enum BaselineCmd {
    /// Expected Recall@n of uniformly random guesses.
    Chance {
        #[arg(long)]
        dict: PathBuf,
        #[arg(long, conflicts_with = "vocab_y_size", required_unless_present = "vocab_y_size")]
        vocab_y: Option<PathBuf>,
        #[arg(long)]
        vocab_y_size: Option<usize>,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: u64,
    },
    /// Joint-probability translation over a pseudo-parallel corpus built by
    /// matching clip features.
    Retrieval {
        #[arg(long)]
        clips_x: PathBuf,
        #[arg(long)]
        clips_y: PathBuf,
        #[arg(long)]
        vocab_x: PathBuf,
        #[arg(long)]
        vocab_y: PathBuf,
        #[arg(long)]
        dict: Option<PathBuf>,
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long)]
        neighbours: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the pseudo-parallel pairs as TSV.
        #[arg(long)]
        pairs_out: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
pub enum SynthCmd {
    Generate(SynthArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub concepts: Option<usize>,
    #[arg(long)]
    pub clips: Option<usize>,
    #[arg(long)]
    pub relevance: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub function_words: Option<usize>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub visual_fraction: Option<f64>,
    #[arg(long)]
    pub text_captions: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    pub runs: Vec<PathBuf>,
    /// Directory for report.md and report.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_label(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.to_owned(), v.to_owned()))
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| format!("expected key=value, got `{s}`"))
}

/// Exit status and category of a failed command.
fn classify(err: &anyhow::Error) -> (u8, &'static str) {
    use groundalign::Error as E;
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return (6, "config");
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Io { .. } => (3, "io"),
                E::DimensionMismatch { .. } => (5, "dimension_mismatch"),
                E::InvalidArgument { .. } => (2, "invalid_argument"),
                _ => (4, "invalid_input"),
            };
        }
        if cause.is::<std::io::Error>() {
            return (3, "io");
        }
        if cause.is::<commands::MissingFiles>() {
            return (3, "missing_file");
        }
        if cause.is::<csv::Error>() || cause.is::<serde_json::Error>() {
            return (4, "invalid_input");
        }
    }
    (1, "internal")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (code, category) = classify(&err);
            let record = serde_json::json!({
                "error": {
                    "category": category,
                    "exit_code": code,
                    "message": format!("{err:#}"),
                }
            });
            eprintln!("{record}");
            ExitCode::from(code)
        }
    }
}
