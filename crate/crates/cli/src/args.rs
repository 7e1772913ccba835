use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "goas", version, about = "Generic object anti-spoofing toolkit")]
pub struct Cli {
    /// Log level filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    pub log: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a procedural dataset with known sensor and medium noise.
    SynthData(SynthArgs),
    /// Train the GAN, the standalone classifier or the binary-map baseline.
    Train(TrainArgs),
    /// Write synthetic spoof patches from a GAN checkpoint.
    Augment(AugmentArgs),
    /// Score a split and write the metrics report and ROC plots.
    Eval(EvalArgs),
    /// Render the learned noise prototypes and their spectra.
    VizPrototypes(VizArgs),
    /// Compare the metrics reports of several runs.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    pub sensors: usize,
    /// Medium count including live (medium 0).
    #[arg(long, default_value_t = 3)]
    pub mediums: usize,
    #[arg(long, default_value_t = 4)]
    pub videos_per_combo: usize,
    #[arg(long, default_value_t = 4)]
    pub frames: usize,
    #[arg(long, default_value_t = 0.08)]
    pub amplitude: f64,
    /// Square frame side in pixels.
    #[arg(long, default_value_t = 64)]
    pub frame_size: usize,
    /// Period of the medium gratings; must divide the frame size.
    #[arg(long, default_value_t = 16)]
    pub period: usize,
    /// Spoof combinations to generate, e.g. `0:1,1:2`; live videos are
    /// always generated for every sensor. Default: all.
    #[arg(long)]
    pub spoof_combos: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; defaults to a folder under $GOAS_CACHE.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Model {
    Gan,
    Golab,
    Gopad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Ablation {
    OnehotMaps,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(value_enum)]
    pub model: Model,
    #[arg(long)]
    pub manifest: PathBuf,
    /// JSON object of configuration overrides.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Extra `key=value` overrides applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// GAN checkpoint, GAN run directory or `augment` output directory (classifier only).
    #[arg(long)]
    pub augment_from: Option<PathBuf>,
    #[arg(long)]
    pub augment_ratio: Option<f64>,
    /// Synthetic patches per combination when augmenting from a checkpoint.
    #[arg(long)]
    pub augment_per_combo: Option<usize>,
    #[arg(long, value_enum)]
    pub ablation: Option<Ablation>,
    /// Overrides the seed of the config.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub per_combo: usize,
    /// Target combinations, e.g. `0:1,2:2`. Default: every spoof combination.
    #[arg(long)]
    pub combos: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AggregationArg {
    Vote,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ThresholdSource {
    /// EER threshold of the train split.
    Train,
    /// EER threshold of the evaluated split (HTER equals EER).
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Random patches per frame.
    #[arg(long, default_value_t = 20)]
    pub patches: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Where to write the metrics report (JSON).
    #[arg(long)]
    pub report: PathBuf,
    /// Directory for ROC, grouped ROC and confusion plots.
    #[arg(long)]
    pub roc_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "vote")]
    pub aggregation: AggregationArg,
    #[arg(long, value_enum, default_value = "train")]
    pub hter_threshold: ThresholdSource,
    /// Skip the sensor/medium confusion matrices.
    #[arg(long)]
    pub no_confusion: bool,
    /// Threads used to score videos.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct VizArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directories holding `report.json`, or report files.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    /// Also write the table as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}
