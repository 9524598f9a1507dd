use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "idt", version, about = "Illuminated decision trees over CNN features")]
pub struct Cli {
    /// Pipeline config (TOML). Flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overwrite existing outputs; with `run`, redo every stage.
    #[arg(long, global = true)]
    pub force: bool,
    /// Output file or directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic colored-blob dataset.
    Synth(SynthArgs),
    /// Detect and crop one cell per image into 100×100 crops.
    Extract(ExtractArgs),
    /// Train a CNN on a crop dataset and write a checkpoint.
    Train(TrainArgs),
    /// Export flattened feature vectors of one layer.
    Features(FeaturesArgs),
    /// Visualize channels by activation maximization.
    Viz(VizArgs),
    /// Render the best-channel mosaic of one image.
    Bestchannel(BestChannelArgs),
    /// Fit or score a decision tree on feature vectors.
    #[command(subcommand)]
    Tree(TreeCommand),
    /// Annotate a tree with feature visualizations and write a session.
    Illuminate(IlluminateArgs),
    /// Serve a session to the explorer.
    Serve(ServeArgs),
    /// Run the whole pipeline from the config, reusing up-to-date stages.
    Run,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Dataset spec (JSON or TOML); pink versus blue blobs by default.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Images per class.
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Raw image root with one directory per class.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Accepted hues in degrees, `LO:HI`.
    #[arg(long)]
    pub hue_band: Option<String>,
    #[arg(long)]
    pub min_area: Option<usize>,
    #[arg(long)]
    pub min_saturation: Option<f64>,
    /// png or jpeg.
    #[arg(long)]
    pub format: Option<String>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Crop root (`<dir>/<class>/*`) or a manifest JSON file.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Train share of each class when building a manifest.
    #[arg(long)]
    pub split_fraction: Option<f64>,
    /// Keep only these classes (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub classes: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// cnn4 or cnn6.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    /// Checkpoint directory.
    #[arg(long)]
    pub model: PathBuf,
    /// Defaults to the model's designated feature layer.
    #[arg(long)]
    pub layer: Option<String>,
    /// Defaults to the manifest stored with the checkpoint.
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Args)]
pub struct VizFlags {
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub step_size: Option<f64>,
}

#[derive(Debug, Args)]
pub struct VizArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub layer: Option<String>,
    /// Inclusive range `A..B` or a comma list, e.g. `0..23` or `3,9,44`.
    #[arg(long, default_value = "0..23")]
    pub channels: String,
    #[command(flatten)]
    pub viz: VizFlags,
}

#[derive(Debug, Args)]
pub struct BestChannelArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// A 100×100 crop, or a raw image to crop first.
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub layer: Option<String>,
    /// Visualization cache; defaults to `viz/` next to the output PNG.
    #[arg(long)]
    pub viz_dir: Option<PathBuf>,
    /// Blend the source image underneath at this opacity.
    #[arg(long)]
    pub overlay: Option<f64>,
    #[command(flatten)]
    pub viz: VizFlags,
}

#[derive(Debug, Subcommand)]
pub enum TreeCommand {
    /// Fit a tree on the train table of FEATS.
    Fit(TreeFitArgs),
    /// Report train and test accuracy of a fitted tree.
    Score(TreeScoreArgs),
}

#[derive(Debug, Args)]
pub struct TreeFitArgs {
    /// Feature directory (train.feats, test.feats) or one table file.
    #[arg(long)]
    pub feats: PathBuf,
    #[arg(long)]
    pub max_depth: Option<usize>,
    /// Feature names never used for splits, e.g. `6_5_9,0_0_20`.
    #[arg(long, value_delimiter = ',')]
    pub exclude: Vec<String>,
    /// gini or entropy.
    #[arg(long)]
    pub criterion: Option<String>,
    #[arg(long)]
    pub min_samples_leaf: Option<usize>,
    #[arg(long)]
    pub min_samples_split: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TreeScoreArgs {
    #[arg(long)]
    pub tree: PathBuf,
    #[arg(long)]
    pub feats: PathBuf,
}

#[derive(Debug, Args)]
pub struct IlluminateArgs {
    #[arg(long)]
    pub tree: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Precomputed feature tables; extracted from the data otherwise.
    #[arg(long)]
    pub feats: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    /// channel_mean or positioned.
    #[arg(long)]
    pub objective: Option<String>,
    #[arg(long)]
    pub examples_per_leaf: Option<usize>,
    #[command(flatten)]
    pub viz: VizFlags,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub session: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Directory with a built explorer UI.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    /// Answer 404 for features without a stored visualization.
    #[arg(long)]
    pub no_on_demand_viz: bool,
}
