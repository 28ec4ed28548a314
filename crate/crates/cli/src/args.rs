use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "sdtrade", version, about = "Stateful-defense trade-off laboratory")]
pub struct Cli {
    /// Master seed; every random stream derives from it.
    #[arg(long, global = true, env = "SDTRADE_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum Command {
    /// Detection / false-positive curves over a threshold sweep.
    Tradeoff(TradeoffArgs),
    /// Monte Carlo check of the quantization toy-model bound.
    ToyValidate(ToyValidateArgs),
    /// Monte Carlo check of the bi-Lipschitz bound on synthetic linear extractors.
    LinearValidate(LinearValidateArgs),
    /// Distribution of feature-distance / input-distance ratios.
    Lipschitz(LipschitzArgs),
    /// Loss increase along estimated gradients over (beta, step) grids.
    LossSurface(LossSurfaceArgs),
    /// Concentration of randomly projected gradients.
    GradConcentration(GradConcentrationArgs),
    /// Evaluate a closed-form bound.
    Bounds(BoundsArgs),
    /// Extract features into a JSON-lines cache.
    Extract(ExtractArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtractorKind {
    Toy,
    Blacklight,
    Piha,
    Linear,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ExtractorArgs {
    /// Extractors to run (comma-separated).
    #[arg(long = "extractor", value_enum, value_delimiter = ',', default_value = "blacklight")]
    pub extractors: Vec<ExtractorKind>,
    /// Pixel quantization bin (toy, blacklight).
    #[arg(long, default_value_t = 50)]
    pub bin_size: u32,
    /// Sliding-window length in pixel values (blacklight).
    #[arg(long, default_value_t = 20)]
    pub window: usize,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// Digests kept per image (blacklight).
    #[arg(long, default_value_t = 50)]
    pub top_k: usize,
    /// Gaussian blur sigma (piha).
    #[arg(long, default_value_t = 1.0)]
    pub blur_sigma: f64,
    /// Sum-pooling block (piha).
    #[arg(long, default_value_t = 7)]
    pub block: usize,
    /// Smallest singular value (linear).
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    /// Largest / smallest singular value (linear).
    #[arg(long, default_value_t = 1.0)]
    pub condition_number: f64,
    /// Seed for random singular vectors (linear); omitted means the standard basis.
    #[arg(long)]
    pub matrix_seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataFormat {
    Cifar10,
    ImageDir,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKindArg {
    GridGaussian,
    RandomTexture,
    PiecewiseSmooth,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DatasetArgs {
    /// CIFAR-10 batch directory / file, or an image directory.
    #[arg(long, required_unless_present = "synthetic")]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "cifar10")]
    pub format: DataFormat,
    /// Generate images instead of loading them.
    #[arg(long, value_enum, conflicts_with = "data")]
    pub synthetic: Option<SynthKindArg>,
    /// Synthetic image shape, HxWxC.
    #[arg(long, default_value = "32x32x3")]
    pub dims: String,
    /// Synthetic pixel-noise std in normalized units.
    #[arg(long, default_value_t = 0.02)]
    pub synth_sigma: f64,
    /// Images to sample.
    #[arg(long, default_value_t = 1000)]
    pub n_images: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FpModeArg {
    Pairwise,
    Streaming,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TradeoffArgs {
    #[command(flatten)]
    pub extractor: ExtractorArgs,
    #[command(flatten)]
    pub dataset: DatasetArgs,
    /// Perturbation stds in normalized pixel units (comma-separated).
    #[arg(long, value_delimiter = ',', default_value = "0.01")]
    pub betas: Vec<f64>,
    /// Explicit thresholds; omitted means an automatic log-spaced sweep.
    #[arg(long, value_delimiter = ',')]
    pub taus: Option<Vec<f64>>,
    /// Points in the automatic sweep.
    #[arg(long, default_value_t = 40)]
    pub tau_points: usize,
    #[arg(long, value_enum, default_value = "pairwise")]
    pub mode: FpModeArg,
    #[arg(long, default_value_t = 100)]
    pub n_base: usize,
    #[arg(long, default_value_t = 100)]
    pub n_pert: usize,
    /// Sample this many natural pairs instead of all of them.
    #[arg(long)]
    pub max_pairs: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ToyValidateArgs {
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub d: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0.1")]
    pub sigma: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    pub beta: Vec<f64>,
    #[arg(long, default_value_t = 100_000)]
    pub trials: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LinearValidateArgs {
    #[arg(long, default_value_t = 16)]
    pub d: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,4")]
    pub condition_number: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    /// Seed for random singular vectors; omitted means the standard basis.
    #[arg(long)]
    pub matrix_seed: Option<u64>,
    /// Natural-query noise around grid centres.
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
    /// Natural centres are uniform on {0..grid-1}^d.
    #[arg(long, default_value_t = 4)]
    pub grid: u32,
    #[arg(long, default_value_t = 0.5)]
    pub beta: f64,
    #[arg(long, value_delimiter = ',')]
    pub taus: Option<Vec<f64>>,
    #[arg(long, default_value_t = 40)]
    pub tau_points: usize,
    /// Natural pairs and perturbation trials.
    #[arg(long, default_value_t = 100_000)]
    pub n: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LipschitzArgs {
    #[command(flatten)]
    pub extractor: ExtractorArgs,
    #[command(flatten)]
    pub dataset: DatasetArgs,
    #[arg(long, default_value_t = 10_000)]
    pub pairs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub beta: f64,
    #[arg(long, default_value_t = 50)]
    pub bins: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Quadratic,
    LogSumExp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeArg {
    Antithetic,
    OneSided,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LossSurfaceArgs {
    #[arg(long, value_enum, default_value = "log-sum-exp")]
    pub loss: LossKind,
    #[arg(long, default_value_t = 16)]
    pub d: usize,
    /// Rows of the log-sum-exp weight matrix.
    #[arg(long, default_value_t = 8)]
    pub rows: usize,
    /// Std of the log-sum-exp weights.
    #[arg(long, default_value_t = 1.0)]
    pub weight_scale: f64,
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.1,1")]
    pub betas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.05,0.1")]
    pub steps: Vec<f64>,
    #[arg(long, default_value_t = 50)]
    pub q: usize,
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
    #[arg(long, value_enum, default_value = "antithetic")]
    pub scheme: SchemeArg,
    /// Every coordinate of the starting point.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub x0: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GradConcentrationArgs {
    #[arg(long, value_delimiter = ',', default_value = "100")]
    pub k: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0.1")]
    pub beta: Vec<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub epsilon: f64,
    /// Gradient dimension.
    #[arg(long, default_value_t = 16)]
    pub d: usize,
    #[arg(long, default_value_t = 10_000)]
    pub trials: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum Theorem {
    /// Quantization toy model.
    #[value(name = "1")]
    Toy,
    /// Bi-Lipschitz extractor.
    #[value(name = "2")]
    Lipschitz,
    /// Gradient concentration.
    #[value(name = "3")]
    Gradient,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BoundsArgs {
    #[arg(long, value_enum)]
    pub theorem: Theorem,
    #[arg(long, default_value_t = 1)]
    pub d: usize,
    #[arg(long)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.0)]
    pub alpha_fp: f64,
    /// K_U / K_L.
    #[arg(long, default_value_t = 1.0)]
    pub ratio: f64,
    /// Expected distance between natural queries.
    #[arg(long, default_value_t = 1.0)]
    pub spread: f64,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, default_value_t = 0.5)]
    pub epsilon: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub extractor: ExtractorArgs,
    #[command(flatten)]
    pub dataset: DatasetArgs,
}
