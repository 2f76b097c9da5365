mod commands;
mod run;
mod stamp;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Guidebook-grounded image geolocation.
#[derive(Debug, Parser)]
#[command(name = "g3", version, propagate_version = true)]
pub struct Cli {
    /// Base directory for relative paths.
    #[arg(long, global = true, env = "G3_DATA_DIR")]
    pub data_dir: Option<PathBuf>,

    /// Log level (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Guidebook ingestion.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Country matching and pseudo labels.
    #[command(subcommand)]
    Geoparse(GeoparseCmd),
    /// Panorama splits.
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Synthetic embedding stores.
    #[command(subcommand)]
    Synth(SynthCmd),
    /// Train the attention classifier.
    Train(TrainArgs),
    /// Score a trained run.
    Eval(EvalArgs),
    /// Train and score every ablation cell over several seeds.
    Ablate(AblateArgs),
    /// Most attended clues for one image.
    Explain(ExplainArgs),
    /// Clue and image histograms.
    Stats(StatsArgs),
}

#[derive(Debug, Subcommand)]
pub enum CorpusCmd {
    /// Split a guidebook into location-bearing clue sentences.
    Extract(ExtractArgs),
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub guide: PathBuf,
    /// Country lexicon JSON; the built-in lexicon when absent.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Extra place list, one term per line; the built-in list when absent.
    #[arg(long)]
    pub places: Option<PathBuf>,
    /// Heading-to-cue-type map JSON.
    #[arg(long)]
    pub heading_map: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum GeoparseCmd {
    /// Match clues to countries and write the pseudo-label maps.
    BuildLabels(BuildLabelsArgs),
}

#[derive(Debug, Args)]
pub struct BuildLabelsArgs {
    #[arg(long)]
    pub clues: PathBuf,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Country codes, one per line.
    #[arg(long)]
    pub label_set: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Where to write the clues with countries filled in; defaults to `--clues`.
    #[arg(long)]
    pub clues_out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum DatasetCmd {
    /// Assign panoramas to train/val/test and expand them into image records.
    Split(SplitArgs),
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// JSONL of {"panorama_id", "country"}.
    #[arg(long)]
    pub panoramas: PathBuf,
    #[arg(long, default_value = "0.9,0.05,0.05")]
    pub ratios: String,
    #[arg(long)]
    pub test_per_country: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum SynthCmd {
    /// Write query, feature, clue and random-clue stores for a manifest.
    Generate(SynthArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub clues: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Store driving the attention query.
    #[arg(long)]
    pub query_store: PathBuf,
    /// Classifier feature stores, concatenated in the order given.
    #[arg(long = "feature-store", required = true)]
    pub feature_stores: Vec<PathBuf>,
    #[arg(long)]
    pub clue_store: Option<PathBuf>,
    #[arg(long)]
    pub pseudo: Option<PathBuf>,
    /// Clue texts, kept with the run for `explain`.
    #[arg(long)]
    pub clues: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NormalizeArg {
    Mean,
    SumOfWeights,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// TrainConfig JSON; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_attn: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    /// `auto` or a fixed positive weight.
    #[arg(long)]
    pub pos_weight: Option<String>,
    #[arg(long)]
    pub no_shuffle: bool,
    #[arg(long)]
    pub no_attn_relu: bool,
    #[arg(long, value_enum)]
    pub normalize: Option<NormalizeArg>,
    /// Comma-separated alphas; picks alpha by validation Top-1 before training.
    #[arg(long)]
    pub alpha_grid: Option<String>,
    /// Row label used by `eval`.
    #[arg(long, default_value = "G3")]
    pub label: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, default_value = "1,5,10")]
    pub ks: String,
    /// Checkpoint to score; the final one when absent.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Per-image predictions to include (ranked countries and clues).
    #[arg(long, default_value_t = 5)]
    pub top: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub query_store: PathBuf,
    #[arg(long)]
    pub feature_store: PathBuf,
    #[arg(long)]
    pub clue_store: Option<PathBuf>,
    #[arg(long)]
    pub random_clue_store: Option<PathBuf>,
    #[arg(long)]
    pub pseudo: Option<PathBuf>,
    /// AblationConfig JSON; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of seeds, 0..N.
    #[arg(long)]
    pub seeds: Option<u64>,
    #[arg(long)]
    pub ks: Option<String>,
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub image_id: String,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Clue texts; defaults to the ones recorded with the run.
    #[arg(long)]
    pub clues: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub clues: PathBuf,
    #[arg(long)]
    pub pseudo: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(&cli.log_level))
        .format_timestamp(None)
        .init();
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
