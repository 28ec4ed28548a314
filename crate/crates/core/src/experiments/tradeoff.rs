//! Detection / false-positive trade-off curves over a threshold sweep.

use std::io::Write;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_io::{extract_all, DatasetHandle};
use crate::extractors::{feature_distance, Extractor, Feature};
use crate::sampling::{Purpose, RngStream};

use super::stats::{binomial_se, count_at_most, logspace, percentile_sorted, sort_floats};
use super::{check_taus, invalid, perturb_image, ExperimentError};

/// How the false-positive rate is measured.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FpMode {
    /// Fraction of natural pairs within `τ` of each other.
    #[default]
    Pairwise,
    /// Fraction of benign queries flagged while streaming through an unbounded buffer.
    Streaming,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffConfig {
    pub beta: f64,
    pub mode: FpMode,
    /// Base images for the detection rate (the first `n_base` of the sample).
    pub n_base: usize,
    /// Perturbations per base image.
    pub n_pert: usize,
    /// Pairwise mode only: sample this many distinct pairs instead of using all of them.
    pub max_pairs: Option<usize>,
}

impl Default for TradeoffConfig {
    fn default() -> Self {
        Self { beta: 0.01, mode: FpMode::Pairwise, n_base: 100, n_pert: 100, max_pairs: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub tau: f64,
    pub alpha_fp: f64,
    pub alpha_det: f64,
    pub n_fp_trials: usize,
    pub n_det_trials: usize,
    pub beta: f64,
}

impl TradeoffPoint {
    pub fn se_det(&self) -> f64 {
        binomial_se(self.alpha_det, self.n_det_trials)
    }
}

/// Sorted distance samples behind a curve; any `τ` can be evaluated afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffSamples {
    pub beta: f64,
    pub mode: FpMode,
    /// Pairwise distances, or each query's distance to its nearest predecessor.
    pub fp_distances: Vec<f64>,
    /// Distance between each base image and its perturbed copy.
    pub det_distances: Vec<f64>,
}

impl TradeoffSamples {
    pub fn point(&self, tau: f64) -> TradeoffPoint {
        let n_fp = self.fp_distances.len();
        let n_det = self.det_distances.len();
        TradeoffPoint {
            tau,
            alpha_fp: count_at_most(&self.fp_distances, tau) as f64 / n_fp as f64,
            alpha_det: count_at_most(&self.det_distances, tau) as f64 / n_det as f64,
            n_fp_trials: n_fp,
            n_det_trials: n_det,
            beta: self.beta,
        }
    }

    pub fn curve(&self, taus: &[f64]) -> Result<Vec<TradeoffPoint>, ExperimentError> {
        check_taus(taus)?;
        Ok(taus.iter().map(|&t| self.point(t)).collect())
    }
}

/// Maps a row-major index over `{(i, j) : i < j < n}` back to the pair.
fn unrank_pair(mut k: usize, n: usize) -> (usize, usize) {
    let mut i = 0;
    loop {
        let row = n - 1 - i;
        if k < row {
            return (i, i + 1 + k);
        }
        k -= row;
        i += 1;
    }
}

fn pairwise_distances(
    features: &[Feature],
    max_pairs: Option<usize>,
    master_seed: u64,
) -> Result<Vec<f64>, ExperimentError> {
    let n = features.len();
    let total = n * (n - 1) / 2;
    let dist = |(i, j): (usize, usize)| feature_distance(&features[i], &features[j]);
    let out: Result<Vec<f64>, _> = match max_pairs {
        Some(m) if m < total => {
            let mut rng = RngStream::for_purpose(master_seed, Purpose::Pairing, 0).rng();
            let mut picked = index::sample(&mut rng, total, m).into_vec();
            picked.sort_unstable();
            picked.into_par_iter().map(|k| dist(unrank_pair(k, n))).collect()
        }
        _ => (0..n).into_par_iter().flat_map_iter(|i| (i + 1..n).map(move |j| (i, j))).map(dist).collect(),
    };
    Ok(out?)
}

/// Distance from each query to the nearest earlier query (`+∞` for the first).
fn streaming_distances(features: &[Feature]) -> Result<Vec<f64>, ExperimentError> {
    let out: Result<Vec<f64>, _> = (0..features.len())
        .into_par_iter()
        .map(|i| {
            features[..i].iter().try_fold(f64::INFINITY, |m, f| feature_distance(&features[i], f).map(|d| m.min(d)))
        })
        .collect();
    Ok(out?)
}

/// Extracts features and measures every distance a curve needs.
pub fn tradeoff_samples(
    extractor: &Extractor,
    data: &DatasetHandle,
    cfg: &TradeoffConfig,
    master_seed: u64,
) -> Result<TradeoffSamples, ExperimentError> {
    if data.count() == 0 {
        return Err(ExperimentError::EmptyDataset);
    }
    if !(cfg.beta >= 0.0 && cfg.beta.is_finite()) {
        return Err(invalid("beta must be finite and >= 0"));
    }
    if cfg.n_base == 0 || cfg.n_pert == 0 {
        return Err(invalid("n_base and n_pert must be >= 1"));
    }
    if cfg.n_base > data.count() {
        return Err(invalid(format!("n_base = {} exceeds the {} sampled images", cfg.n_base, data.count())));
    }
    let features = extract_all(data, extractor)?;
    let mut fp_distances = match cfg.mode {
        FpMode::Pairwise if features.len() < 2 => return Err(invalid("pairwise mode needs at least two images")),
        FpMode::Pairwise => pairwise_distances(&features, cfg.max_pairs, master_seed)?,
        FpMode::Streaming => streaming_distances(&features)?,
    };
    let det: Result<Vec<f64>, ExperimentError> = (0..cfg.n_base * cfg.n_pert)
        .into_par_iter()
        .map(|t| {
            let base = t / cfg.n_pert;
            let mut rng = RngStream::for_purpose(master_seed, Purpose::Perturbation, t as u64).rng();
            let perturbed = perturb_image(&data.images[base], cfg.beta, &mut rng);
            Ok(feature_distance(&features[base], &extractor.extract_image(&perturbed)?)?)
        })
        .collect();
    let mut det_distances = det?;
    sort_floats(&mut fp_distances);
    sort_floats(&mut det_distances);
    Ok(TradeoffSamples { beta: cfg.beta, mode: cfg.mode, fp_distances, det_distances })
}

/// α^fp and α^det at each `τ` (ascending).
pub fn tradeoff_curve(
    extractor: &Extractor,
    data: &DatasetHandle,
    taus: &[f64],
    cfg: &TradeoffConfig,
    master_seed: u64,
) -> Result<Vec<TradeoffPoint>, ExperimentError> {
    check_taus(taus)?;
    tradeoff_samples(extractor, data, cfg, master_seed)?.curve(taus)
}

/// `points` thresholds log-spaced between the 0.1th and 99.9th percentiles of the
/// finite positive distances in `sorted`. Falls back to `[0]` when no distance is
/// finite and positive (e.g. exact-match features).
pub fn auto_taus(sorted: &[f64], points: usize) -> Vec<f64> {
    let usable: Vec<f64> = sorted.iter().copied().filter(|d| d.is_finite()).collect();
    let Some(min_pos) = usable.iter().copied().find(|&d| d > 0.0) else {
        return vec![0.0];
    };
    let mut lo = percentile_sorted(&usable, 0.1);
    if !(lo > 0.0) {
        lo = min_pos;
    }
    let hi = percentile_sorted(&usable, 99.9).max(lo);
    logspace(lo, hi, points.max(1))
}

#[derive(Serialize)]
struct TradeoffRow<'a> {
    extractor: &'a str,
    dataset: &'a str,
    beta: f64,
    tau: f64,
    alpha_fp: f64,
    alpha_det: f64,
    n_fp: usize,
    n_det: usize,
}

/// One curve labelled for the CSV output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffCurve {
    pub extractor: String,
    pub dataset: String,
    pub points: Vec<TradeoffPoint>,
}

/// CSV columns: `extractor,dataset,beta,tau,alpha_fp,alpha_det,n_fp,n_det`.
pub fn write_tradeoff_csv<W: Write>(out: W, curves: &[TradeoffCurve]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(out);
    if curves.iter().all(|c| c.points.is_empty()) {
        w.write_record(["extractor", "dataset", "beta", "tau", "alpha_fp", "alpha_det", "n_fp", "n_det"])?;
    }
    for c in curves {
        for p in &c.points {
            w.serialize(TradeoffRow {
                extractor: &c.extractor,
                dataset: &c.dataset,
                beta: p.beta,
                tau: p.tau,
                alpha_fp: p.alpha_fp,
                alpha_det: p.alpha_det,
                n_fp: p.n_fp_trials,
                n_det: p.n_det_trials,
            })?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
