//! Monte Carlo checks of the closed-form detection bounds.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::extractors::{toy_quantize_values, LinearExtractor};
use crate::sampling::{sample_natural, sample_perturbation, Purpose, RngStream, ToyModelConfig};
use crate::scalar::distance;
use crate::theory::{general_bound, markov_fp_floor, toy_bound, BoundInput};

use super::stats::{binomial_se, count_at_most, sort_floats};
use super::{check_taus, invalid, ExperimentError};

const MIN_TRIALS: usize = 1000;

/// Outcome of one toy-model validation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyValidation {
    pub d: usize,
    pub sigma: f64,
    pub beta: f64,
    pub n_trials: usize,
    pub alpha_fp_hat: f64,
    pub alpha_det_hat: f64,
    pub se_det: f64,
    pub bound: f64,
    /// `α̂^det > bound + 3·SE`.
    pub violated: bool,
}

/// Estimates α^fp = P[H(x) ≠ p] and α^det = P[H(x+δ) = H(x)] for the toy quantizer
/// and compares α̂^det against the toy bound evaluated at α̂^fp.
pub fn toy_validate(
    cfg: &ToyModelConfig<f64>,
    n_trials: usize,
    master_seed: u64,
) -> Result<ToyValidation, ExperimentError> {
    cfg.validate()?;
    if n_trials < MIN_TRIALS {
        return Err(invalid(format!("need at least {MIN_TRIALS} trials, got {n_trials}")));
    }
    let outcomes: Vec<(bool, bool)> = (0..n_trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = RngStream::for_purpose(master_seed, Purpose::Trial, t as u64).rng();
            let x = sample_natural(cfg, &mut rng);
            let delta = sample_perturbation(cfg, &mut rng);
            let hx = toy_quantize_values(&x);
            let moved: Vec<f64> = x.iter().zip(&delta).map(|(a, b)| a + b).collect();
            (hx != cfg.center, toy_quantize_values(&moved) == hx)
        })
        .collect();
    let n = n_trials as f64;
    let alpha_fp_hat = outcomes.iter().filter(|o| o.0).count() as f64 / n;
    let alpha_det_hat = outcomes.iter().filter(|o| o.1).count() as f64 / n;
    let se_det = binomial_se(alpha_det_hat, n_trials);
    let bound = toy_bound(cfg.d, cfg.beta, alpha_fp_hat);
    Ok(ToyValidation {
        d: cfg.d,
        sigma: cfg.sigma,
        beta: cfg.beta,
        n_trials,
        alpha_fp_hat,
        alpha_det_hat,
        se_det,
        bound,
        violated: alpha_det_hat > bound + 3.0 * se_det,
    })
}

/// Natural queries `x = p + σz` with `p` uniform on `{0, …, grid−1}^d`; attack
/// perturbations `δ ~ 𝒩(0, I β²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearValidationConfig {
    pub sigma: f64,
    pub grid: u32,
    pub beta: f64,
    pub taus: Vec<f64>,
    /// Natural pairs for α̂^fp and M_D, and perturbation trials for α̂^det.
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearRow {
    pub tau: f64,
    pub alpha_fp_hat: f64,
    pub alpha_det_hat: f64,
    pub se_det: f64,
    pub bound: f64,
    /// Markov floor `1 − K_U·M_D/τ` on α^fp (may be vacuous).
    pub markov_floor: f64,
    pub violated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearValidation {
    pub d: usize,
    pub beta: f64,
    pub lipschitz_ratio: f64,
    pub k_upper: f64,
    /// Mean pairwise input distance of natural queries.
    pub spread: f64,
    pub n: usize,
    pub rows: Vec<LinearRow>,
}

fn natural_query<R: Rng>(d: usize, sigma: f64, grid: u32, rng: &mut R) -> Vec<f64> {
    let centre: Vec<i64> = (0..d).map(|_| i64::from(rng.random_range(0..grid))).collect();
    let cfg = ToyModelConfig { d, sigma, beta: 1.0, center: centre };
    sample_natural(&cfg, rng)
}

/// Distance samples behind a linear-extractor validation; any `τ` sweep can be
/// evaluated afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSamples {
    pub d: usize,
    pub sigma: f64,
    pub beta: f64,
    /// Mean pairwise input distance of natural queries.
    pub spread: f64,
    /// Sorted feature distances between natural pairs.
    pub fp_distances: Vec<f64>,
    /// Sorted feature distances between a query and its perturbed copy.
    pub det_distances: Vec<f64>,
}

/// Draws `n` natural pairs and `n` perturbation trials through `ext`.
pub fn linear_samples(
    ext: &LinearExtractor,
    sigma: f64,
    grid: u32,
    beta: f64,
    n: usize,
    master_seed: u64,
) -> Result<LinearSamples, ExperimentError> {
    let d = ext.input_dim();
    if ext.output_dim() < d {
        return Err(invalid("the extractor must not reduce dimension"));
    }
    if !(sigma > 0.0) || !(beta > 0.0) || grid == 0 {
        return Err(invalid("sigma and beta must be > 0 and grid >= 1"));
    }
    if n < MIN_TRIALS {
        return Err(invalid(format!("need at least {MIN_TRIALS} samples, got {n}")));
    }
    let samples: Result<Vec<(f64, f64, f64)>, ExperimentError> = (0..n)
        .into_par_iter()
        .map(|t| {
            let mut rng = RngStream::for_purpose(master_seed, Purpose::Natural, t as u64).rng();
            let a = natural_query(d, sigma, grid, &mut rng);
            let b = natural_query(d, sigma, grid, &mut rng);
            let input = distance(&a, &b);
            let fp = distance(&ext.apply(&a)?, &ext.apply(&b)?);

            let mut rng = RngStream::for_purpose(master_seed, Purpose::Perturbation, t as u64).rng();
            let x = natural_query(d, sigma, grid, &mut rng);
            let pert = ToyModelConfig { d, sigma, beta, center: vec![0; d] };
            let delta = sample_perturbation(&pert, &mut rng);
            let moved: Vec<f64> = x.iter().zip(&delta).map(|(u, v)| u + v).collect();
            let det = distance(&ext.apply(&x)?, &ext.apply(&moved)?);
            Ok((input, fp, det))
        })
        .collect();
    let samples = samples?;
    let spread = samples.iter().map(|s| s.0).sum::<f64>() / n as f64;
    let mut fp_distances: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let mut det_distances: Vec<f64> = samples.iter().map(|s| s.2).collect();
    sort_floats(&mut fp_distances);
    sort_floats(&mut det_distances);
    Ok(LinearSamples { d, sigma, beta, spread, fp_distances, det_distances })
}

impl LinearSamples {
    /// Empirical rates and the general bound at each `τ`.
    pub fn evaluate(&self, ext: &LinearExtractor, taus: &[f64]) -> Result<LinearValidation, ExperimentError> {
        check_taus(taus)?;
        let ratio = ext.lipschitz_ratio();
        let n = self.fp_distances.len();
        let mut rows = Vec::with_capacity(taus.len());
        for &tau in taus {
            let alpha_fp_hat = count_at_most(&self.fp_distances, tau) as f64 / n as f64;
            let alpha_det_hat = count_at_most(&self.det_distances, tau) as f64 / n as f64;
            let se_det = binomial_se(alpha_det_hat, n);
            let bound = if alpha_fp_hat >= 1.0 {
                1.0
            } else {
                general_bound(&BoundInput {
                    d: self.d,
                    beta: self.beta,
                    alpha_fp: alpha_fp_hat,
                    lipschitz_ratio: ratio.max(1.0),
                    spread: self.spread,
                    k: 1,
                    epsilon: 0.0,
                    sigma: self.sigma,
                })?
            };
            rows.push(LinearRow {
                tau,
                alpha_fp_hat,
                alpha_det_hat,
                se_det,
                bound,
                markov_floor: markov_fp_floor(tau, ext.k_upper(), self.spread).raw,
                violated: alpha_det_hat > bound + 3.0 * se_det,
            });
        }
        Ok(LinearValidation {
            d: self.d,
            beta: self.beta,
            lipschitz_ratio: ratio,
            k_upper: ext.k_upper(),
            spread: self.spread,
            n,
            rows,
        })
    }
}

/// Sweeps `τ`, pairing empirical rates for a linear extractor with the general bound
/// at the empirical α̂^fp, the exact distortion ratio and the estimated spread.
pub fn linear_validate(
    ext: &LinearExtractor,
    cfg: &LinearValidationConfig,
    master_seed: u64,
) -> Result<LinearValidation, ExperimentError> {
    check_taus(&cfg.taus)?;
    linear_samples(ext, cfg.sigma, cfg.grid, cfg.beta, cfg.n, master_seed)?.evaluate(ext, &cfg.taus)
}

/// CSV columns: `d,sigma,beta,n_trials,alpha_fp_hat,alpha_det_hat,se_det,bound,violated`.
pub fn write_toy_validation_csv<W: Write>(out: W, rows: &[ToyValidation]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// CSV columns: `tau,alpha_fp_hat,alpha_det_hat,se_det,bound,markov_floor,violated`.
pub fn write_linear_validation_csv<W: Write>(out: W, rows: &[LinearRow]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
