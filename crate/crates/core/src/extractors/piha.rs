use crate::imagekit::{gaussian_blur_3x3, lbp, rgb_to_hue, sum_pool, GaussianKernel3, Image};

use super::{Feature, FeatureError, PihaConfig};

/// Blur → hue → sum-pool → local binary pattern.
pub fn piha_extract(img: &Image, cfg: &PihaConfig) -> Result<Feature, FeatureError> {
    let kernel = GaussianKernel3::new(cfg.sigma)?;
    piha_extract_with(img, &kernel, cfg.block)
}

pub(crate) fn piha_extract_with(img: &Image, kernel: &GaussianKernel3, block: usize) -> Result<Feature, FeatureError> {
    let blurred = gaussian_blur_3x3(img, kernel);
    let hue = rgb_to_hue(&blurred)?;
    let pooled = sum_pool(&hue, block)?;
    Ok(Feature::BitString(lbp(&pooled)?))
}
