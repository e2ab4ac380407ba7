use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use tmascore::forest::Mtry;
use tmascore::texture::{Direction, FeatureOptions};

#[derive(Debug, Parser)]
#[command(name = "tmascore", version, about = "Texture-based scoring of tissue microarray images with confidence-gated transfer")]
pub struct Cli {
    /// Worker threads for all parallel stages (default: available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus: PGM images plus one manifest per source.
    Synth(SynthArgs),
    /// Extract spatial-histogram features for every image in a manifest.
    Extract(ExtractArgs),
    /// Train a random forest on a feature table and save the model.
    Train(TrainArgs),
    /// Score a test set with and without confidence-gated transfer.
    TransferScore(TransferArgs),
    /// Class separation ratio of one or more feature tables.
    Evaluate(EvaluateArgs),
    /// Project feature tables onto their first two principal components.
    PcaExport(PcaArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Corpus definition (JSON). Defaults to the bundled benchmark.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the seed stored in the spec.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct FeatureArgs {
    /// Number of gray levels after quantization.
    #[arg(long, default_value_t = 51)]
    pub levels: usize,
    /// Neighbor direction in degrees: 0, 45, 90 or 135.
    #[arg(long, default_value = "45")]
    pub direction: Direction,
    /// Neighbor distance in pixels.
    #[arg(long, default_value_t = 1)]
    pub distance: usize,
    /// Sum the histograms of all four directions.
    #[arg(long)]
    pub pool_directions: bool,
    /// Keep raw pair counts instead of normalizing to frequencies.
    #[arg(long)]
    pub raw: bool,
}

impl FeatureArgs {
    pub fn options(&self) -> FeatureOptions {
        FeatureOptions {
            levels: self.levels,
            direction: self.direction,
            distance: self.distance,
            normalize: !self.raw,
            pool_directions: self.pool_directions,
        }
    }
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub features: FeatureArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ForestArgs {
    #[arg(long, default_value_t = 100)]
    pub trees: usize,
    /// Features tried per split: `sqrt`, `2sqrt` or an integer.
    #[arg(long, default_value = "sqrt")]
    pub mtry: Mtry,
    #[arg(long, default_value_t = 1)]
    pub min_node_size: usize,
    /// Root seed for every random choice.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Feature table written by `extract`.
    #[arg(long)]
    pub features: PathBuf,
    #[command(flatten)]
    pub forest: ForestArgs,
    /// Optional feature table to report accuracy on.
    #[arg(long)]
    pub test_features: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    /// Primary images: an image manifest or a feature table.
    #[arg(long)]
    pub train_manifest: PathBuf,
    /// Auxiliary set as `name=path`; repeat for several sets, applied in order.
    #[arg(long = "aux-manifest", value_parser = parse_named_path)]
    pub aux: Vec<(String, PathBuf)>,
    /// Fixed test set. Without it the primary set is split at random.
    #[arg(long, conflicts_with_all = ["split", "stratified"])]
    pub test_manifest: Option<PathBuf>,
    /// Training fraction for random splits of the primary set.
    #[arg(long, default_value_t = 0.5)]
    pub split: f64,
    /// Split each class separately.
    #[arg(long)]
    pub stratified: bool,
    #[arg(long, default_value_t = 1)]
    pub runs: usize,
    /// Minimum vote margin for transfer.
    #[arg(long, default_value_t = 0.10)]
    pub beta: f64,
    /// Also score a model trained on every auxiliary image without gating.
    #[arg(long)]
    pub pooled_baseline: bool,
    /// Skip the per-source refits.
    #[arg(long)]
    pub no_per_source: bool,
    #[command(flatten)]
    pub forest: ForestArgs,
    #[command(flatten)]
    pub features: FeatureArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Feature tables; several are concatenated.
    #[arg(long, required = true, num_args = 1..)]
    pub features: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PcaArgs {
    /// Feature tables; several are concatenated.
    #[arg(long, required = true, num_args = 1..)]
    pub features: Vec<PathBuf>,
    /// Score CSV; explained variance goes to the same path with a `.json`
    /// extension.
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_named_path(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
        _ => Err(format!("expected NAME=PATH, got `{s}`")),
    }
}
