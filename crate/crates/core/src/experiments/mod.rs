//! Reproducible studies: trade-off curves, bound validation, Lipschitz-ratio
//! spreads, the loss-increase surface and gradient-projection concentration.
//!
//! Every trial draws from its own [`RngStream`](crate::sampling::RngStream),
//! trials run in parallel, and results are gathered in trial order before any
//! reduction, so outputs depend only on `(config, master_seed)`.

mod gradient;
mod lipschitz;
pub mod stats;
mod tradeoff;
mod validate;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::extractors::FeatureError;
use crate::imagekit::{Image, ImageError};
use crate::sampling::SamplingError;
use crate::theory::TheoryError;

pub use gradient::{
    gradient_concentration, loss_surface, projection_moments, write_concentration_csv, write_surface_csv,
    ConcentrationReport, LossSurface, ProjectionMoments, Regime, SurfaceCell, SurfaceConfig,
};
pub use lipschitz::{
    lipschitz_ratios, write_lipschitz_csv, LipschitzConfig, LipschitzInput, LipschitzPair, LipschitzReport, SpreadStats,
};
pub use stats::Histogram;
pub use tradeoff::{
    auto_taus, tradeoff_curve, tradeoff_samples, write_tradeoff_csv, FpMode, TradeoffConfig, TradeoffCurve,
    TradeoffPoint, TradeoffSamples,
};
pub use validate::{
    linear_samples, linear_validate, toy_validate, write_linear_validation_csv, write_toy_validation_csv, LinearRow,
    LinearSamples, LinearValidation, LinearValidationConfig, ToyValidation,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("gradient estimate stayed zero after {retries} retries")]
    ZeroEstimate { retries: usize },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn invalid(msg: impl Into<String>) -> ExperimentError {
    ExperimentError::InvalidConfig(msg.into())
}

fn check_taus(taus: &[f64]) -> Result<(), ExperimentError> {
    if taus.is_empty() {
        return Err(invalid("tau list is empty"));
    }
    if taus.iter().any(|t| t.is_nan() || *t < 0.0) {
        return Err(invalid("taus must be non-negative numbers"));
    }
    if taus.windows(2).any(|w| w[0] > w[1]) {
        return Err(invalid("taus must be sorted ascending"));
    }
    Ok(())
}

/// Adds `𝒩(0, (255β)²)` noise per pixel, then rounds and clamps to the 8-bit grid.
pub fn perturb_image<R: Rng + ?Sized>(img: &Image, beta: f64, rng: &mut R) -> Image {
    let scale = 255.0 * beta;
    let mut out = img.clone();
    for p in out.pixels_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *p = (f64::from(*p) + scale * z).round().clamp(0.0, 255.0) as u8;
    }
    out
}
