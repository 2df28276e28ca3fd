use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sftik_core::model::{Fusion, PatchMode};
use sftik_core::Side;

#[derive(Parser, Debug)]
#[command(name = "sftik", version, about = "Stride-level thigh-angle forecasting from depth images and IMU kinematics")]
pub struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a seeded synthetic stride dataset.
    Synth(SynthArgs),
    /// Build a stride dataset from a raw IMU CSV and a depth-frame index.
    Preprocess(PreprocessArgs),
    /// Train a model on one cross-validation fold.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Print the analytic FLOPs and parameter count as JSON.
    Flops(FlopsArgs),
    /// Merge several evaluation reports into one per-terrain CSV.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub subjects: Option<usize>,
    /// Samples per subject.
    #[arg(long)]
    pub strides: Option<usize>,
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON file with generator settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SideArg {
    Left,
    Right,
}

impl From<SideArg> for Side {
    fn from(s: SideArg) -> Self {
        match s {
            SideArg::Left => Side::Left,
            SideArg::Right => Side::Right,
        }
    }
}

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    /// IMU CSV with a timestamp column and the 19 channel columns.
    #[arg(long)]
    pub imu: PathBuf,
    /// JSON-lines depth-frame index ({"t", "path", "terrain"} per line).
    #[arg(long)]
    pub frames: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub subject: u32,
    #[arg(long, value_enum)]
    pub side: SideArg,
    /// Low-pass cutoff applied to every channel.
    #[arg(long, default_value_t = 30.0)]
    pub cutoff_hz: f64,
    /// Leading standstill used for bias calibration.
    #[arg(long, default_value_t = 1.0)]
    pub standstill_s: f64,
    #[arg(long, default_value_t = 224)]
    pub image_size: usize,
    #[arg(long, default_value_t = 0.4)]
    pub min_stride_s: f64,
    #[arg(long, default_value_t = 2.0)]
    pub max_stride_s: f64,
    #[arg(long)]
    pub force: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PatchArg {
    Width,
    Height,
    Square,
}

impl From<PatchArg> for PatchMode {
    fn from(p: PatchArg) -> Self {
        match p {
            PatchArg::Width => PatchMode::Width,
            PatchArg::Height => PatchMode::Height,
            PatchArg::Square => PatchMode::Square,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FusionArg {
    Sandwich,
    Early,
    Late,
}

impl From<FusionArg> for Fusion {
    fn from(f: FusionArg) -> Self {
        match f {
            FusionArg::Sandwich => Fusion::Sandwich,
            FusionArg::Early => Fusion::Early,
            FusionArg::Late => Fusion::Late,
        }
    }
}

/// Architecture overrides shared by `train` and `flops`.
#[derive(Args, Debug, Default)]
pub struct ModelArgs {
    #[arg(long)]
    pub d_emb: Option<usize>,
    #[arg(long)]
    pub n1: Option<usize>,
    #[arg(long)]
    pub n2: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long, value_enum)]
    pub patch: Option<PatchArg>,
    /// Square input image side in pixels.
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long)]
    pub image_patch: Option<usize>,
    #[arg(long)]
    pub image_channels: Option<usize>,
    #[arg(long)]
    pub imu_patch_len: Option<usize>,
    #[arg(long)]
    pub imu_patch_stride: Option<usize>,
    #[arg(long, value_enum)]
    pub fusion: Option<FusionArg>,
    #[arg(long)]
    pub no_prev_image: bool,
    #[arg(long)]
    pub no_imu: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub fold: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub warmup: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON file mirroring the training config (model settings under "model").
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub force: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for metrics.json / metrics.csv.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Also score the copy-previous-stride baseline.
    #[arg(long)]
    pub baseline: bool,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct FlopsArgs {
    /// JSON model config (or a training config with a "model" object).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Count a standalone image encoder with this many blocks instead of
    /// the full model.
    #[arg(long)]
    pub encoder_blocks: Option<usize>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// `label=path/to/metrics.json`, repeatable.
    #[arg(long = "input", required = true)]
    pub inputs: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}
