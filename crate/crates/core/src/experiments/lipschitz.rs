//! Empirical distance-distortion ratios `d_H(H(x), H(x+δ)) / ‖δ‖`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_io::DatasetHandle;
use crate::extractors::{feature_distance, Extractor};
use crate::sampling::{standard_normal_vec, Purpose, RngStream};
use crate::scalar::{distance, norm};

use super::stats::{percentile_sorted, sample_variance, sort_floats, Histogram};
use super::{invalid, perturb_image, ExperimentError};

/// Inputs whose neighbourhoods are probed.
#[derive(Debug, Clone, Copy)]
pub enum LipschitzInput<'a> {
    /// 8-bit images; perturbed copies are rounded to the pixel grid and `‖δ‖` is
    /// the realized difference in normalized `[0, 1]` units.
    Images(&'a DatasetHandle),
    /// Real vectors perturbed without rounding.
    Vectors(&'a [Vec<f64>]),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzConfig {
    pub n_pairs: usize,
    pub beta: f64,
    pub bins: usize,
}

impl Default for LipschitzConfig {
    fn default() -> Self {
        Self { n_pairs: 10_000, beta: 0.01, bins: 50 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzPair {
    pub pair_id: usize,
    pub input_dist: f64,
    pub feature_dist: f64,
    pub ratio: f64,
}

/// Spread of the finite ratios. For hash extractors these are empirical proxies,
/// not distortion constants in any formal sense.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpreadStats {
    pub p05: f64,
    pub p95: f64,
    pub mean: f64,
    pub coefficient_of_variation: f64,
    /// `p95 / p05`; `None` when `p05 = 0`.
    pub empirical_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub extractor: String,
    pub pairs: Vec<LipschitzPair>,
    pub histogram: Histogram,
    pub spread: SpreadStats,
    /// Pairs whose realized perturbation was zero (ratio undefined, excluded).
    pub skipped_zero_delta: usize,
    /// Pairs with an infinite ratio (exact-match features that moved), excluded from the stats.
    pub infinite_ratios: usize,
}

impl LipschitzReport {
    pub fn ratios(&self) -> impl Iterator<Item = f64> + '_ {
        self.pairs.iter().map(|p| p.ratio)
    }
}

fn spread_stats(ratios: &[f64]) -> SpreadStats {
    let mut sorted: Vec<f64> = ratios.iter().copied().filter(|r| r.is_finite()).collect();
    sort_floats(&mut sorted);
    if sorted.is_empty() {
        return SpreadStats {
            p05: f64::NAN,
            p95: f64::NAN,
            mean: f64::NAN,
            coefficient_of_variation: f64::NAN,
            empirical_ratio: None,
        };
    }
    let p05 = percentile_sorted(&sorted, 5.0);
    let p95 = percentile_sorted(&sorted, 95.0);
    let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
    let cv = if sorted.len() < 2 || mean == 0.0 {
        f64::NAN
    } else if sorted[0] == sorted[sorted.len() - 1] {
        0.0
    } else {
        sample_variance(&sorted).sqrt() / mean
    };
    SpreadStats { p05, p95, mean, coefficient_of_variation: cv, empirical_ratio: (p05 > 0.0).then(|| p95 / p05) }
}

/// Pair `t` perturbs input `t mod n` with its own stream.
pub fn lipschitz_ratios(
    extractor: &Extractor,
    input: LipschitzInput<'_>,
    cfg: &LipschitzConfig,
    master_seed: u64,
) -> Result<LipschitzReport, ExperimentError> {
    if cfg.n_pairs == 0 {
        return Err(invalid("n_pairs must be >= 1"));
    }
    if !(cfg.beta > 0.0 && cfg.beta.is_finite()) {
        return Err(invalid("beta must be > 0"));
    }
    let n_inputs = match input {
        LipschitzInput::Images(d) => d.count(),
        LipschitzInput::Vectors(v) => v.len(),
    };
    if n_inputs == 0 {
        return Err(ExperimentError::EmptyDataset);
    }
    let measured: Result<Vec<(f64, f64)>, ExperimentError> = (0..cfg.n_pairs)
        .into_par_iter()
        .map(|t| {
            let mut rng = RngStream::for_purpose(master_seed, Purpose::Perturbation, t as u64).rng();
            let i = t % n_inputs;
            match input {
                LipschitzInput::Images(data) => {
                    let x = &data.images[i];
                    let moved = perturb_image(x, cfg.beta, &mut rng);
                    let fd = feature_distance(&extractor.extract_image(x)?, &extractor.extract_image(&moved)?)?;
                    Ok((distance(&x.normalized(), &moved.normalized()), fd))
                }
                LipschitzInput::Vectors(xs) => {
                    let x = &xs[i];
                    let z: Vec<f64> = standard_normal_vec(&mut rng, x.len());
                    let moved: Vec<f64> = x.iter().zip(&z).map(|(a, b)| a + cfg.beta * b).collect();
                    let delta: Vec<f64> = moved.iter().zip(x).map(|(a, b)| a - b).collect();
                    let fd = feature_distance(&extractor.extract_vector(x)?, &extractor.extract_vector(&moved)?)?;
                    Ok((norm(&delta), fd))
                }
            }
        })
        .collect();
    let mut pairs = Vec::with_capacity(cfg.n_pairs);
    let mut skipped_zero_delta = 0;
    for (pair_id, (input_dist, feature_dist)) in measured?.into_iter().enumerate() {
        if input_dist == 0.0 {
            skipped_zero_delta += 1;
            continue;
        }
        pairs.push(LipschitzPair { pair_id, input_dist, feature_dist, ratio: feature_dist / input_dist });
    }
    let ratios: Vec<f64> = pairs.iter().map(|p| p.ratio).collect();
    Ok(LipschitzReport {
        extractor: extractor.name().to_owned(),
        histogram: Histogram::new(&ratios, cfg.bins),
        spread: spread_stats(&ratios),
        infinite_ratios: ratios.iter().filter(|r| r.is_infinite()).count(),
        skipped_zero_delta,
        pairs,
    })
}

/// CSV columns: `pair_id,input_dist,feature_dist,ratio`.
pub fn write_lipschitz_csv<W: Write>(out: W, report: &LipschitzReport) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(out);
    if report.pairs.is_empty() {
        w.write_record(["pair_id", "input_dist", "feature_dist", "ratio"])?;
    }
    for p in &report.pairs {
        w.serialize(p)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
