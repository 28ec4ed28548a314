//! Feature extractors under study and their intrinsic distance metrics.

mod blacklight;
mod feature;
mod linear;
mod piha;
mod toy;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::imagekit::{GaussianKernel3, Image, ImageError};

pub use blacklight::{blacklight_extract, blacklight_window_digests, quantize_pixels};
pub use feature::{feature_distance, BitString, Digest, Feature, FeatureShape, FeatureTag};
pub use linear::{linear_extract, LinearExtractor};
pub use piha::piha_extract;
pub use toy::{toy_quantize, toy_quantize_values};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("feature tags differ: {left:?} vs {right:?}")]
    TagMismatch { left: FeatureTag, right: FeatureTag },
    #[error("feature dimensions differ: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("window {window} exceeds flattened image length {len}")]
    WindowTooLarge { window: usize, len: usize },
    #[error("invalid extractor config: {0}")]
    InvalidConfig(String),
    #[error("{extractor} extractor does not accept {input} inputs")]
    Unsupported { extractor: &'static str, input: &'static str },
    #[error("matrix is rank deficient (smallest singular value {0})")]
    RankDeficient(f64),
    #[error("cannot decode feature: {0}")]
    Decode(String),
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Quantization toy extractor applied to images: pixel `p` maps to
/// `(p − bin_size/2) / bin_size` before rounding, so bin centres land on integers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    #[serde(default = "default_bin_size")]
    pub bin_size: u32,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self { bin_size: default_bin_size() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlacklightConfig {
    #[serde(default = "default_bin_size")]
    pub bin_size: u32,
    pub window: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
}

impl Default for BlacklightConfig {
    /// Settings used for 32×32 images.
    fn default() -> Self {
        Self { bin_size: 50, window: 20, stride: 1, top_k: 50 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PihaConfig {
    #[serde(default = "default_piha_sigma")]
    pub sigma: f64,
    #[serde(default = "default_block")]
    pub block: usize,
}

impl Default for PihaConfig {
    fn default() -> Self {
        Self { sigma: 1.0, block: 7 }
    }
}

/// Synthetic linear extractor `x ↦ Mx` with singular values log-spaced
/// in `[scale, scale · condition_number]`.
///
/// Without a seed the singular vectors are the standard basis, so
/// `condition_number = 1` yields exactly `scale · I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearConfig {
    pub input_dim: usize,
    pub output_dim: usize,
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default = "default_scale")]
    pub condition_number: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_bin_size() -> u32 {
    50
}
fn default_stride() -> usize {
    1
}
fn default_top_k() -> usize {
    50
}
fn default_piha_sigma() -> f64 {
    1.0
}
fn default_block() -> usize {
    7
}
fn default_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExtractorConfig {
    Toy(ToyConfig),
    Blacklight(BlacklightConfig),
    Piha(PihaConfig),
    Linear(LinearConfig),
}

impl ExtractorConfig {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Toy(_) => "toy",
            Self::Blacklight(_) => "blacklight",
            Self::Piha(_) => "piha",
            Self::Linear(_) => "linear",
        }
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        let bad = |msg: &str| Err(FeatureError::InvalidConfig(msg.to_owned()));
        match *self {
            Self::Toy(c) if c.bin_size == 0 => bad("bin_size must be positive"),
            Self::Blacklight(c) if c.bin_size == 0 => bad("bin_size must be positive"),
            Self::Blacklight(c) if c.window == 0 => bad("window must be positive"),
            Self::Blacklight(c) if c.stride == 0 => bad("stride must be positive"),
            Self::Blacklight(c) if c.top_k == 0 => bad("top_k must be positive"),
            Self::Piha(c) if !(c.sigma > 0.0 && c.sigma.is_finite()) => bad("sigma must be positive"),
            Self::Piha(c) if c.block == 0 => bad("block must be positive"),
            Self::Linear(c) if c.input_dim == 0 || c.output_dim == 0 => bad("dimensions must be positive"),
            Self::Linear(c) if !(c.scale > 0.0 && c.scale.is_finite()) => bad("scale must be positive"),
            Self::Linear(c) if !(c.condition_number >= 1.0 && c.condition_number.is_finite()) => {
                bad("condition number must be >= 1")
            }
            _ => Ok(()),
        }
    }

    /// Hex SHA-256 of the canonical JSON encoding; identifies cached features.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("extractor config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// A constructed, immutable extractor.
#[derive(Debug, Clone)]
pub enum Extractor {
    Toy(ToyConfig),
    Blacklight(BlacklightConfig),
    Piha { config: PihaConfig, kernel: GaussianKernel3 },
    Linear { config: LinearConfig, map: LinearExtractor },
}

impl Extractor {
    pub fn new(config: &ExtractorConfig) -> Result<Self, FeatureError> {
        config.validate()?;
        Ok(match *config {
            ExtractorConfig::Toy(c) => Self::Toy(c),
            ExtractorConfig::Blacklight(c) => Self::Blacklight(c),
            ExtractorConfig::Piha(c) => Self::Piha { config: c, kernel: GaussianKernel3::new(c.sigma)? },
            ExtractorConfig::Linear(c) => Self::Linear { config: c, map: LinearExtractor::from_config(&c)? },
        })
    }

    pub fn config(&self) -> ExtractorConfig {
        match self {
            Self::Toy(c) => ExtractorConfig::Toy(*c),
            Self::Blacklight(c) => ExtractorConfig::Blacklight(*c),
            Self::Piha { config, .. } => ExtractorConfig::Piha(*config),
            Self::Linear { config, .. } => ExtractorConfig::Linear(*config),
        }
    }

    pub fn name(&self) -> &'static str {
        self.config().name()
    }

    pub fn extract_image(&self, img: &Image) -> Result<Feature, FeatureError> {
        match self {
            Self::Toy(c) => {
                let bin = f64::from(c.bin_size);
                let x: Vec<f64> = img.pixels().iter().map(|&p| (f64::from(p) - bin / 2.0) / bin).collect();
                Ok(toy_quantize(&x))
            }
            Self::Blacklight(c) => blacklight_extract(img, c),
            Self::Piha { config, kernel } => piha::piha_extract_with(img, kernel, config.block),
            Self::Linear { map, .. } => linear_extract(&img.normalized(), map),
        }
    }

    /// Extraction on raw real vectors; only the toy and linear extractors accept these.
    pub fn extract_vector(&self, x: &[f64]) -> Result<Feature, FeatureError> {
        match self {
            Self::Toy(_) => Ok(toy_quantize(x)),
            Self::Linear { map, .. } => linear_extract(x, map),
            Self::Blacklight(_) => Err(FeatureError::Unsupported { extractor: "blacklight", input: "vector" }),
            Self::Piha { .. } => Err(FeatureError::Unsupported { extractor: "piha", input: "vector" }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_json_shape() {
        let cfg = ExtractorConfig::Blacklight(BlacklightConfig::default());
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(json, r#"{"kind":"blacklight","bin_size":50,"window":20,"stride":1,"top_k":50}"#);
        let back: ExtractorConfig = serde_json::from_str(r#"{"kind":"blacklight","window":50}"#).unwrap();
        assert_eq!(
            back,
            ExtractorConfig::Blacklight(BlacklightConfig { bin_size: 50, window: 50, stride: 1, top_k: 50 })
        );
    }

    #[test]
    fn fingerprint_tracks_config() {
        let a = ExtractorConfig::Blacklight(BlacklightConfig::default());
        let b = ExtractorConfig::Blacklight(BlacklightConfig { bin_size: 25, ..Default::default() });
        assert_eq!(a.fingerprint(), a.fingerprint());
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint().len(), 64);
    }

    #[test]
    fn validation_rejects_zeroes() {
        let bad = ExtractorConfig::Blacklight(BlacklightConfig { window: 0, ..Default::default() });
        assert!(matches!(bad.validate(), Err(FeatureError::InvalidConfig(_))));
        let bad = ExtractorConfig::Piha(PihaConfig { sigma: -1.0, block: 7 });
        assert!(Extractor::new(&bad).is_err());
        let bad = ExtractorConfig::Linear(LinearConfig {
            input_dim: 4,
            output_dim: 4,
            scale: 1.0,
            condition_number: 0.5,
            seed: None,
        });
        assert!(bad.validate().is_err());
    }

    #[test]
    fn toy_image_extraction_uses_bin_indices() {
        let img = Image::new(1, 4, 1, vec![0, 25, 49, 50]).unwrap();
        let ex = Extractor::new(&ExtractorConfig::Toy(ToyConfig::default())).unwrap();
        assert_eq!(ex.extract_image(&img).unwrap(), Feature::IntVector(vec![0, 0, 0, 1]));
    }

    #[test]
    fn vector_inputs_rejected_for_image_hashes() {
        let ex = Extractor::new(&ExtractorConfig::Blacklight(BlacklightConfig::default())).unwrap();
        assert!(matches!(ex.extract_vector(&[0.0]), Err(FeatureError::Unsupported { .. })));
    }
}
