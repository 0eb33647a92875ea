use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use isoform_core::GradeLevel;

#[derive(Debug, Parser)]
#[command(name = "isoform", version, about = "Isometric exercise assessment from pose keypoints")]
pub struct Cli {
    /// Indent JSON output.
    #[arg(long, global = true)]
    pub pretty: bool,
    /// JSON file of default flag values, keyed by flag name.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Find repetitions in every clip of a dataset.
    Segment(SegmentArgs),
    /// Turn segmented reps into angle features.
    Featurize(FeaturizeArgs),
    /// Train a classifier on a feature table.
    Train(TrainArgs),
    /// Score predictions with weighted F1 and the three-part metric.
    Eval(EvalArgs),
    /// Run the live session server.
    Serve(ServeArgs),
    /// Feed a pose CSV through a session and print the protocol messages.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Exercise name, comma separated list, or "all".
    #[arg(long, value_delimiter = ',', default_value = "all")]
    pub exercise: Vec<String>,
    /// Class indices to generate (0 = correct).
    #[arg(long = "class", value_delimiter = ',', default_values_t = [0usize, 1, 2])]
    pub classes: Vec<usize>,
    /// Reps per class.
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    /// Recordings per class; reps are spread over them.
    #[arg(long, default_value_t = 1)]
    pub clips: usize,
    /// Keypoint noise standard deviation, normalized units.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 2000.0)]
    pub hold_ms: f64,
    #[arg(long, default_value_t = 30.0)]
    pub fps: f64,
    /// Output directory; one subdirectory per exercise.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Segment dump (JSON lines); standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Segment dump written by `segment`.
    #[arg(long)]
    pub segments: PathBuf,
    /// Feature CSV; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct HyperArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Feature CSV written by `featurize`.
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub exercise: String,
    /// Model JSON to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Hold out this share of each class (seeded); train on the rest.
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Feature CSV to predict on.
    #[arg(long, conflicts_with = "manifest")]
    pub features: Option<PathBuf>,
    /// Dataset to segment, featurize and predict on.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Prediction dump (JSON lines) to score as is.
    #[arg(long, conflicts_with_all = ["model", "features", "manifest", "from_clips"])]
    pub predictions: Option<PathBuf>,
    /// Segment, featurize, train and predict in one run from `--manifest`.
    #[arg(long, requires = "manifest", conflicts_with = "model")]
    pub from_clips: bool,
    /// Score only the held-out share of each class (same split as `train`).
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    /// Also write the predictions as JSON lines.
    #[arg(long)]
    pub predictions_out: Option<PathBuf>,
    /// With `--from-clips`, also write the trained model.
    #[arg(long, requires = "from_clips")]
    pub model_out: Option<PathBuf>,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub listen: String,
    /// Directory of model JSON files, one per exercise.
    #[arg(long, env = "ISOFORM_MODELS_DIR")]
    pub models: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Pose CSV to replay.
    #[arg(long)]
    pub csv: PathBuf,
    /// Model JSON; takes precedence over `--models`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, env = "ISOFORM_MODELS_DIR")]
    pub models: Option<PathBuf>,
    /// Exercise; defaults to the directory two levels above the CSV.
    #[arg(long)]
    pub exercise: Option<String>,
    /// Pace frames by their timestamps instead of running flat out.
    #[arg(long)]
    pub realtime: bool,
    #[arg(long, value_enum, default_value = "standard")]
    pub level: LevelArg,
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum LevelArg {
    Professional,
    Standard,
    Beginner,
}

impl From<LevelArg> for GradeLevel {
    fn from(l: LevelArg) -> Self {
        match l {
            LevelArg::Professional => GradeLevel::Professional,
            LevelArg::Standard => GradeLevel::Standard,
            LevelArg::Beginner => GradeLevel::Beginner,
        }
    }
}
