use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "cdsa", version, about = "Synthetic digital subtraction angiography toolkit")]
pub struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    /// key=value file of flag defaults for the subcommand.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a vessel-tree phantom: background.f32, mask.pgm, centerline.pgm.
    SynthPhantom(SynthPhantomArgs),
    /// Multiscale vesselness prior of an image.
    Vesselness(VesselnessArgs),
    /// Contrast-filled frame from a background and a vessel mask.
    SynthPair(SynthPairArgs),
    /// Inject signal-dependent noise near the vessels.
    AddNoise(AddNoiseArgs),
    /// Log-domain subtraction of a contrast frame from its background.
    Subtract(SubtractArgs),
    /// Local moment alignment loss between two images.
    Statloss(StatlossArgs),
    /// Segmentation and image-quality metrics.
    Evaluate(EvaluateArgs),
    /// Finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
    /// Phantom, prior, pair, subtraction and evaluation in one run.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackgroundArg {
    Flat,
    Gradient,
    #[value(name = "rib_bands", alias = "rib-bands")]
    RibBands,
}

#[derive(Debug, Clone, Args)]
pub struct PhantomArgs {
    /// Image side in pixels.
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    #[arg(long, default_value_t = 3)]
    pub tree_depth: usize,
    #[arg(long, default_value_t = 7.0)]
    pub root_width: f64,
    #[arg(long, default_value_t = 0.7)]
    pub width_decay: f64,
    #[arg(long, value_enum, default_value_t = BackgroundArg::RibBands)]
    pub background: BackgroundArg,
}

#[derive(Debug, Args)]
pub struct SynthPhantomArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub phantom: PhantomArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolarityArg {
    Dark,
    Bright,
}

#[derive(Debug, Clone, Args)]
pub struct FrangiArgs {
    /// Comma-separated increasing scales.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1.0, 1.5, 2.0, 3.0, 4.0, 6.0])]
    pub sigmas: Vec<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub beta: f64,
    /// Structureness scale: `auto` or a positive number.
    #[arg(long, default_value = "auto")]
    pub c: String,
    #[arg(long, value_enum, default_value_t = PolarityArg::Dark)]
    pub polarity: PolarityArg,
    #[arg(long, default_value_t = 2.0)]
    pub gamma_norm: f64,
}

#[derive(Debug, Args)]
pub struct VesselnessArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Output image (.f32 or .pgm).
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub frangi: FrangiArgs,
}

#[derive(Debug, Clone, Args)]
pub struct NoiseArgs {
    /// Signal-dependent noise gain.
    #[arg(long, default_value_t = 0.0)]
    pub alpha: f64,
    /// Stationary noise floor.
    #[arg(long, default_value_t = 0.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 3.0)]
    pub dilate_radius: f64,
    #[arg(long, default_value_t = 2.0)]
    pub blur_sigma: f64,
}

#[derive(Debug, Args)]
pub struct SynthPairArgs {
    #[arg(long)]
    pub bg: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    /// Output directory: input.f32, target.f32, depth.f32.
    #[arg(long)]
    pub out: PathBuf,
    /// Contrast attenuation per pixel of thickness.
    #[arg(long, default_value_t = 0.7)]
    pub mu_c: f64,
    #[command(flatten)]
    pub noise: NoiseArgs,
}

#[derive(Debug, Args)]
pub struct AddNoiseArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub noise: NoiseArgs,
}

#[derive(Debug, Args)]
pub struct SubtractArgs {
    /// Pre-contrast frame.
    #[arg(long)]
    pub bg: PathBuf,
    /// Contrast-filled frame.
    #[arg(long)]
    pub raw: PathBuf,
    /// `.f32` keeps physical values; `.pgm` writes a 16-bit display image
    /// with a `.txt` sidecar holding the scale.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1e-4)]
    pub epsilon_log: f64,
}

#[derive(Debug, Args)]
pub struct StatlossArgs {
    #[arg(long)]
    pub syn: PathBuf,
    #[arg(long)]
    pub tar: PathBuf,
    /// Weight mask; all pixels when omitted.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long, default_value_t = 11)]
    pub window: usize,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub epsilon: f64,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Prediction image (subtraction or segmentation).
    #[arg(long)]
    pub pred: PathBuf,
    /// Reference image or mask.
    #[arg(long)]
    pub gt: PathBuf,
    /// Vessel mask for the v*/nv* metrics and pearson.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Contrast-filled frame correlated against --pred by `pearson`.
    #[arg(long)]
    pub raw: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "dsc,iou,cldice,hd95,psnr,ssim")]
    pub metrics: Vec<String>,
    /// Binarization threshold for segmentation metrics.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Binarize --pred with an Otsu threshold instead.
    #[arg(long)]
    pub otsu: bool,
    /// Millimetres per pixel for hd95.
    #[arg(long, default_value_t = 1.0)]
    pub spacing: f64,
    #[arg(long, default_value_t = 1.0)]
    pub data_range: f64,
    /// Also write the JSON array here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GradTarget {
    Gsm,
    Loss,
    Stat,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, value_enum)]
    pub target: GradTarget,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub phantom: PhantomArgs,
    #[arg(long, default_value_t = 0.7)]
    pub mu_c: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub epsilon_log: f64,
    #[arg(long, default_value_t = 0.02)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub gamma: f64,
    #[arg(long, default_value_t = 3.0)]
    pub dilate_radius: f64,
    #[arg(long, default_value_t = 2.0)]
    pub blur_sigma: f64,
    /// Segmentation threshold on the subtraction; half of mu_c when omitted.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[command(flatten)]
    pub frangi: FrangiArgs,
}
