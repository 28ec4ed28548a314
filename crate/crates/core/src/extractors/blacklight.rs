//! Sliding-window SHA-256 hashing of quantized pixels.

use sha2::{Digest as _, Sha256};

use crate::imagekit::Image;

use super::{BlacklightConfig, Digest, Feature, FeatureError};

/// Bin index `⌊p / bin_size⌋` of every pixel, row-major and channel-interleaved.
pub fn quantize_pixels(img: &Image, bin_size: u32) -> Vec<u8> {
    img.pixels().iter().map(|&p| (u32::from(p) / bin_size) as u8).collect()
}

/// Digest of every window, in window-start order (no sorting or truncation).
pub fn blacklight_window_digests(img: &Image, cfg: &BlacklightConfig) -> Result<Vec<Digest>, FeatureError> {
    let quantized = quantize_pixels(img, cfg.bin_size);
    if cfg.window > quantized.len() {
        return Err(FeatureError::WindowTooLarge { window: cfg.window, len: quantized.len() });
    }
    Ok((0..=quantized.len() - cfg.window)
        .step_by(cfg.stride)
        .map(|start| Sha256::digest(&quantized[start..start + cfg.window]).into())
        .collect())
}

/// The `top_k` numerically smallest distinct window digests.
pub fn blacklight_extract(img: &Image, cfg: &BlacklightConfig) -> Result<Feature, FeatureError> {
    let mut digests = blacklight_window_digests(img, cfg)?;
    digests.sort_unstable();
    digests.dedup();
    digests.truncate(cfg.top_k);
    Ok(Feature::DigestSet(digests))
}
