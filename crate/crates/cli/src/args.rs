use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use segfuse_core::IouMode;

#[derive(Debug, Parser)]
#[command(
    name = "segfuse",
    version,
    about = "Evaluate, fuse and augment instance segmentation results"
)]
pub struct Cli {
    /// Base RNG seed for commands that sample.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Log verbosity on stderr: off, error, warn, info, debug, trace.
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: log::LevelFilter,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// COCO-style AP of a results file against a dataset.
    Eval(EvalArgs),
    /// Pick, per image, the model whose predictions best agree with a controller.
    Fuse(FuseArgs),
    /// Score-weighted confusion matrix between ground truth and predictions.
    Confusion(ConfusionArgs),
    /// Category pairs that a confusion matrix marks as frequently mistaken.
    Pairs(PairsArgs),
    /// Blend images whose categories are confused with each other.
    Augment(AugmentArgs),
    /// Generate a synthetic dataset, its images and simulated predictions.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Ground-truth dataset (COCO JSON).
    #[arg(long)]
    pub gt: PathBuf,
    /// Predictions (COCO results JSON).
    #[arg(long)]
    pub dets: PathBuf,
    /// Overlap measure: box or mask.
    #[arg(long, default_value = "box")]
    pub mode: IouMode,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// Dataset whose images are fused (COCO JSON).
    #[arg(long)]
    pub gt: PathBuf,
    /// One results file per model; repeat the flag or list several.
    #[arg(long, num_args = 1.., action = clap::ArgAction::Append)]
    pub models: Vec<PathBuf>,
    /// Controller detections used as pseudo ground truth.
    #[arg(long)]
    pub controller: PathBuf,
    /// Minimum controller score kept as pseudo ground truth.
    #[arg(long, default_value_t = segfuse_core::fusion::DEFAULT_TAU)]
    pub tau: f64,
    /// Ignore categories when matching predictions to pseudo ground truth.
    #[arg(long)]
    pub class_agnostic: bool,
    /// Re-check every step of the trace against a from-scratch evaluation.
    #[arg(long)]
    pub verify: bool,
    /// Where to write the per-image trace.
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
    /// Fused results file (stdout if omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConfusionArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub dets: PathBuf,
    /// A prediction counts toward a ground truth when their IoU is strictly above alpha.
    #[arg(long, default_value_t = segfuse_core::confusion::DEFAULT_ALPHA)]
    pub alpha: f64,
    /// Pair threshold recorded in the output header.
    #[arg(long, default_value_t = segfuse_core::confusion::DEFAULT_BETA)]
    pub beta: f64,
    /// Overlap measure: box or mask.
    #[arg(long, default_value = "box")]
    pub mode: IouMode,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PairsArgs {
    /// Output of `segfuse confusion`.
    #[arg(long)]
    pub confusion: PathBuf,
    /// Keep (i, j), i != j, whose normalized entry is strictly above beta.
    #[arg(long, default_value_t = segfuse_core::confusion::DEFAULT_BETA)]
    pub beta: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Training dataset (COCO JSON).
    #[arg(long)]
    pub gt: PathBuf,
    /// Directory holding the dataset's image files.
    #[arg(long)]
    pub images: PathBuf,
    /// Output of `segfuse pairs`.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Weight of the input image in the blend; the partner gets 1 - gamma.
    #[arg(long, default_value_t = segfuse_core::mixup::DEFAULT_GAMMA)]
    pub gamma: f64,
    /// Probability that an image is replaced by a blended sample.
    #[arg(long, default_value_t = segfuse_core::mixup::DEFAULT_BERNOULLI_P)]
    pub bernoulli_p: f64,
    /// Output size as a fraction of the mean input size, drawn per axis from this range.
    #[arg(
        long,
        num_args = 2,
        value_names = ["LO", "HI"],
        default_values_t = segfuse_core::mixup::DEFAULT_RESIZE_RANGE
    )]
    pub resize_range: Vec<f64>,
    /// Skip brightness and colour jitter on blended outputs.
    #[arg(long)]
    pub no_photometric: bool,
    /// Drop blended instances with less than this fraction left visible.
    #[arg(long, default_value_t = 0.0)]
    pub min_visible: f64,
    /// Receives images/, dataset.json and manifest.json.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of images.
    #[arg(long, default_value_t = 20)]
    pub images: usize,
    /// Number of categories.
    #[arg(long, default_value_t = 3)]
    pub categories: usize,
    /// Instances per image, inclusive range.
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"], default_values_t = [1usize, 4])]
    pub instances: Vec<usize>,
    /// Prediction profiles: a preset name (perfect, controller, moderate, noisy, confused)
    /// or a JSON file holding a noise profile.
    #[arg(
        long,
        num_args = 1..,
        action = clap::ArgAction::Append,
        default_values_t = ["controller".to_string(), "moderate".to_string(), "noisy".to_string()]
    )]
    pub profiles: Vec<String>,
    /// Receives dataset.json, images/, predictions/ and summary.json.
    #[arg(long)]
    pub out_dir: PathBuf,
}
