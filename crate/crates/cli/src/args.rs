use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "radscene",
    version,
    about = "Scene hashing, soft targets, toy alignment, captions and metrics"
)]
pub struct Cli {
    /// Seed for every random choice in the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// JSON config file; explicit flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset (scenes.jsonl, stats.json).
    Generate(GenerateArgs),
    /// Encode a descriptor to a hash, or decode a hash.
    Hash(HashArgs),
    /// Compute the soft target matrix of a dataset.
    Targets(TargetsArgs),
    /// Fit free embeddings to the soft targets.
    Train(TrainArgs),
    /// Render captions for a descriptor or dataset.
    Caption(CaptionArgs),
    /// Parse captions back into descriptors.
    Parse(ParseArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Print the hash bit layout.
    Layout(LayoutArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Highway,
    Urban,
    Intersection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DirectionArg {
    RadarToText,
    TextToRadar,
    Symmetric,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Number of scenes.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: Option<u64>,

    /// Restrict to one scenario kind instead of the default mix.
    #[arg(long, value_enum)]
    pub kind: Option<KindArg>,

    /// Captions per scene.
    #[arg(long)]
    pub captions: Option<usize>,

    /// Inclusive vehicle count range, e.g. `1,12`.
    #[arg(long, value_delimiter = ',', value_name = "MIN,MAX")]
    pub vehicles: Option<Vec<u32>>,
}

#[derive(Debug, Args)]
pub struct HashArgs {
    /// Descriptor JSON file, or a JSONL dataset (one hash per record).
    #[arg(long, conflicts_with = "decode", required_unless_present = "decode")]
    pub input: Option<PathBuf>,

    /// Decode a hash string to descriptor JSON.
    #[arg(long)]
    pub decode: Option<String>,

    /// Use unary count fields.
    #[arg(long)]
    pub thermometer: bool,
}

#[derive(Debug, Args, Clone)]
pub struct KernelArgs {
    /// Per-bin kernel bandwidths, nearest bin first.
    #[arg(long, value_delimiter = ',', value_name = "S1,S2,S3,S4")]
    pub sigma: Option<Vec<f64>>,

    /// Bin weight decay.
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TargetsArgs {
    /// Dataset JSONL.
    #[arg(long)]
    pub dataset: PathBuf,

    /// Expected hash layout version.
    #[arg(long, default_value = "rfm-hash-v1")]
    pub layout: String,

    /// Use only the first N records.
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    pub n: Option<u64>,

    #[command(flatten)]
    pub kernel: KernelArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset JSONL; scenes are generated from the seed when absent.
    #[arg(long)]
    pub dataset: Option<PathBuf>,

    /// Batch size (first N records).
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    pub n: Option<u64>,

    #[arg(long)]
    pub iterations: Option<usize>,

    /// Softmax temperature.
    #[arg(long)]
    pub tau: Option<f64>,

    #[arg(long, value_enum)]
    pub direction: Option<DirectionArg>,

    /// Embedding dimension.
    #[arg(long)]
    pub dim: Option<usize>,

    /// Initial step size.
    #[arg(long)]
    pub step: Option<f64>,

    #[command(flatten)]
    pub kernel: KernelArgs,
}

#[derive(Debug, Args)]
pub struct CaptionArgs {
    /// Descriptor JSON file or JSONL dataset.
    #[arg(long)]
    pub input: PathBuf,

    /// Captions per descriptor.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
}

#[derive(Debug, Args)]
pub struct ParseArgs {
    /// Plain-text caption, or JSONL with `caption`/`captions` fields.
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PredSource {
    /// Parse the `caption` (or first of `captions`) field when present.
    Auto,
    Caption,
    Descriptor,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predictions JSONL keyed by `scene_id`.
    #[arg(long)]
    pub pred: PathBuf,

    /// Ground-truth dataset JSONL.
    #[arg(long)]
    pub truth: PathBuf,

    /// Which prediction field to score.
    #[arg(long, value_enum, default_value_t = PredSource::Auto)]
    pub source: PredSource,

    /// Score only the truth scenes that have a prediction.
    #[arg(long)]
    pub subset: bool,

    /// Re-derive every aggregate and fail on any inconsistency.
    #[arg(long)]
    pub verify: bool,
}

#[derive(Debug, Args)]
pub struct LayoutArgs {
    #[arg(long)]
    pub thermometer: bool,
}
