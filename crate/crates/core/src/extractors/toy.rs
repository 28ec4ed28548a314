use crate::scalar::Real;

use super::Feature;

/// Element-wise round-half-up `⌊x + 0.5⌋`.
pub fn toy_quantize_values<T: Real>(x: &[T]) -> Vec<i64> {
    let half = T::lit(0.5);
    x.iter().map(|&v| (v + half).floor().to_i64().expect("quantized value fits in i64")).collect()
}

/// Quantization extractor of the toy model.
pub fn toy_quantize<T: Real>(x: &[T]) -> Feature {
    Feature::IntVector(toy_quantize_values(x))
}
