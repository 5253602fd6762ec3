use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dexfit_core::eval::PoseSource;
use dexfit_core::fitting::Handedness;
use dexfit_core::priors::PriorKind;

/// Body and hand pose fitting from 2D keypoints with learned pose priors.
///
/// Results are JSON on stdout (or in the `--out` file); logs go to stderr.
/// Exit codes: 0 success, 1 invalid input or usage, 2 numerical failure.
/// `DEXFIT_THREADS` caps the worker threads.
#[derive(Debug, Parser)]
#[command(name = "dexfit", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Template JSON file; the built-in procedural template when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    pub template: Option<PathBuf>,

    /// Range-of-motion table JSON; the bundled table when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    pub rom: Option<PathBuf>,

    /// Log level for stderr (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Test body frames against the range-of-motion table and signer space.
    ///
    /// Prints one JSON record per frame with its verdict and violations.
    Filter(FilterArgs),
    /// Clamp hand poses into the range-of-motion table.
    ///
    /// Writes the rectified poses to `--out` and prints one JSON record per
    /// frame listing the corrected joints.
    Rectify(RectifyArgs),
    /// Train a body or hand VAE pose prior.
    ///
    /// Hand priors are right-handed; left hands in the data are mirrored.
    TrainPrior(TrainArgs),
    /// Fit a keypoint sequence.
    ///
    /// Frames that fail are recorded in the result and the sequence continues;
    /// the exit code is then 2.
    Fit(FitArgs),
    /// Compare predicted and reference poses on template regions (mm).
    Eval(EvalArgs),
    /// Randomized finite-difference check of every differentiable primitive.
    ///
    /// Exits with 2 when any primitive exceeds the tolerance.
    Gradcheck(GradcheckArgs),
    /// Generate a synthetic keypoint sequence with ground truth.
    ///
    /// Writes keypoints.json, gt.json, init.json and camera.json into
    /// `--out-dir`.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    /// Poses file or fit result.
    #[arg(long, value_name = "FILE")]
    pub poses: PathBuf,
    /// Signer-space JSON; defaults when omitted.
    #[arg(long, value_name = "FILE")]
    pub signer_space: Option<PathBuf>,
    /// Write the records here instead of stdout.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RectifyArgs {
    /// Poses file or fit result.
    #[arg(long, value_name = "FILE")]
    pub poses: PathBuf,
    /// Rectified poses file.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Body,
    Hand,
}

impl From<KindArg> for PriorKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Body => PriorKind::Body,
            KindArg::Hand => PriorKind::Hand,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub kind: KindArg,
    /// Training poses file.
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Validation poses file; the best validation checkpoint is kept.
    #[arg(long, value_name = "FILE")]
    pub validation: Option<PathBuf>,
    /// JSON object overriding fields of the default configuration.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Model file to write.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Write the training report here instead of stdout.
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Keypoints file.
    #[arg(long, value_name = "FILE")]
    pub keypoints: PathBuf,
    /// Initial poses: one for every frame, or a single pose for all.
    #[arg(long, value_name = "FILE")]
    pub init: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub camera: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub body_prior: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub hand_prior: PathBuf,
    /// JSON object overriding fields of the default fitting weights.
    #[arg(long, value_name = "FILE")]
    pub weights: Option<PathBuf>,
    /// Optimize explicit shoulder, elbow and wrist corrections.
    #[arg(long)]
    pub refine_arms: bool,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Write the fit result here instead of stdout.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted poses file or fit result.
    #[arg(long, value_name = "FILE")]
    pub pred: PathBuf,
    /// Reference poses file.
    #[arg(long, value_name = "FILE")]
    pub gt: PathBuf,
    /// Comma-separated template regions.
    #[arg(long, value_delimiter = ',', default_value = "ubody-f,lhand,rhand")]
    pub regions: Vec<String>,
    /// Omit per-frame values from the report.
    #[arg(long)]
    pub summary: bool,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Random inputs per primitive.
    #[arg(long, default_value_t = 20)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum HandednessArg {
    TwoHanded,
    OneHandedLeft,
    OneHandedRight,
}

impl From<HandednessArg> for Handedness {
    fn from(h: HandednessArg) -> Self {
        match h {
            HandednessArg::TwoHanded => Handedness::TwoHanded,
            HandednessArg::OneHandedLeft => Handedness::OneHandedLeft,
            HandednessArg::OneHandedRight => Handedness::OneHandedRight,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SourceArg {
    Procedural,
    Prior,
}

impl From<SourceArg> for PoseSource {
    fn from(s: SourceArg) -> Self {
        match s {
            SourceArg::Procedural => PoseSource::Procedural,
            SourceArg::Prior => PoseSource::Prior,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 30)]
    pub frames: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keypoint noise standard deviation in pixels.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, value_enum, default_value = "two-handed")]
    pub handedness: HandednessArg,
    #[arg(long, value_enum, default_value = "procedural")]
    pub source: SourceArg,
    /// Priors for `--source prior`.
    #[arg(long, value_name = "FILE", requires = "hand_prior")]
    pub body_prior: Option<PathBuf>,
    #[arg(long, value_name = "FILE", requires = "body_prior")]
    pub hand_prior: Option<PathBuf>,
    /// Standard deviation (rad) of the perturbation applied to the ground
    /// truth to form init.json.
    #[arg(long, default_value_t = 0.05)]
    pub init_noise: f64,
    /// Confidences are drawn from [1 - attenuation, 1].
    #[arg(long, default_value_t = 0.0)]
    pub attenuation: f64,
    /// Probability that a joint is dropped.
    #[arg(long, default_value_t = 0.0)]
    pub dropout: f64,
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
}
