//! Gradient-quality studies: the loss-increase surface and the concentration
//! of randomly projected gradients.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::sampling::{
    nes_estimate, project_gradient, standard_normal_vec, FiniteDifference, ProjectionConfig, Purpose, RngStream,
    ToyLoss,
};
use crate::scalar::norm;
use crate::theory::{gradient_bound, reg_lower_gamma, Bound};

use super::stats::{binomial_se, mean_and_se, sample_variance};
use super::{invalid, ExperimentError};

const MAX_RETRIES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceConfig {
    pub betas: Vec<f64>,
    pub steps: Vec<f64>,
    /// Probe directions per estimate.
    pub q: usize,
    pub n_trials: usize,
    #[serde(default)]
    pub scheme: FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceCell {
    pub beta: f64,
    pub step: f64,
    pub mean_dloss: f64,
    pub stderr: f64,
    pub trials: usize,
}

/// Mean loss increase per `(β, η)` cell, plus an analytic-gradient reference row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSurface {
    /// β-major: `cells[i * steps.len() + j]` is `(betas[i], steps[j])`.
    pub cells: Vec<SurfaceCell>,
    /// Ascent along the true gradient, one cell per step (`beta = 0`).
    pub oracle: Vec<SurfaceCell>,
    /// Estimates that came out exactly zero and were redrawn.
    pub retries: usize,
}

impl LossSurface {
    pub fn cell(&self, beta: f64, step: f64) -> Option<&SurfaceCell> {
        self.cells.iter().find(|c| c.beta == beta && c.step == step)
    }
}

fn normalized_step(x0: &[f64], dir: &[f64], step: f64) -> Vec<f64> {
    let n = norm(dir);
    x0.iter().zip(dir).map(|(x, g)| x + step * g / n).collect()
}

/// Each trial estimates the gradient at `x0` once per β, reusing the trial's
/// stream across β values (common random numbers), then steps `η·ĝ/‖ĝ‖`.
pub fn loss_surface(
    loss: &ToyLoss<f64>,
    x0: &[f64],
    cfg: &SurfaceConfig,
    master_seed: u64,
) -> Result<LossSurface, ExperimentError> {
    if cfg.betas.is_empty() || cfg.steps.is_empty() {
        return Err(invalid("beta and step grids must be non-empty"));
    }
    if cfg.q == 0 || cfg.n_trials < 2 {
        return Err(invalid("need q >= 1 and at least two trials"));
    }
    if cfg.betas.iter().any(|b| !(*b > 0.0)) || cfg.steps.iter().any(|s| !(*s >= 0.0)) {
        return Err(invalid("betas must be > 0 and steps >= 0"));
    }
    let (l0, grad) = loss.loss_and_grad(x0)?;
    let n_steps = cfg.steps.len();
    let per_trial: Result<Vec<(Vec<f64>, usize)>, ExperimentError> = (0..cfg.n_trials)
        .into_par_iter()
        .map(|t| {
            let stream = RngStream::for_purpose(master_seed, Purpose::Trial, t as u64);
            let mut deltas = Vec::with_capacity(cfg.betas.len() * n_steps);
            let mut retries = 0;
            for &beta in &cfg.betas {
                let mut rng = stream.rng();
                let g = loop {
                    let g = nes_estimate(loss, x0, cfg.q, beta, cfg.scheme, &mut rng)?;
                    if norm(&g) > 0.0 {
                        break g;
                    }
                    retries += 1;
                    if retries > MAX_RETRIES {
                        return Err(ExperimentError::ZeroEstimate { retries });
                    }
                };
                for &step in &cfg.steps {
                    deltas.push(loss.loss(&normalized_step(x0, &g, step))? - l0);
                }
            }
            Ok((deltas, retries))
        })
        .collect();
    let per_trial = per_trial?;
    let mut cells = Vec::with_capacity(cfg.betas.len() * n_steps);
    for (bi, &beta) in cfg.betas.iter().enumerate() {
        for (si, &step) in cfg.steps.iter().enumerate() {
            let samples: Vec<f64> = per_trial.iter().map(|(d, _)| d[bi * n_steps + si]).collect();
            let (mean, se) = mean_and_se(&samples);
            cells.push(SurfaceCell { beta, step, mean_dloss: mean, stderr: se, trials: cfg.n_trials });
        }
    }
    let oracle = if norm(&grad) > 0.0 {
        cfg.steps
            .iter()
            .map(|&step| {
                Ok(SurfaceCell {
                    beta: 0.0,
                    step,
                    mean_dloss: loss.loss(&normalized_step(x0, &grad, step))? - l0,
                    stderr: 0.0,
                    trials: 1,
                })
            })
            .collect::<Result<_, ExperimentError>>()?
    } else {
        Vec::new()
    };
    Ok(LossSurface { cells, oracle, retries: per_trial.iter().map(|(_, r)| r).sum() })
}

/// Whether the projection is in the regime the concentration bound targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `|kβ² − 1| ≤ 0.5`
    Calibrated,
    Uncalibrated,
}

impl Regime {
    pub fn of(k: usize, beta: f64) -> Self {
        if (k as f64 * beta * beta - 1.0).abs() <= 0.5 {
            Self::Calibrated
        } else {
            Self::Uncalibrated
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub k: usize,
    pub d: usize,
    pub beta: f64,
    pub epsilon: f64,
    pub n_trials: usize,
    /// Fraction of draws with `(1−ε)‖∇‖ ≤ ‖G∇‖ ≤ (1+ε)‖∇‖`.
    pub empirical_prob: f64,
    pub stderr: f64,
    /// Same probability from the χ²_k distribution of `‖G∇‖²/(β²‖∇‖²)`.
    pub exact_prob: f64,
    pub bound: Bound<f64>,
    pub regime: Regime,
    /// `empirical_prob ≥ bound − 3·SE`; outside the calibrated regime a `false`
    /// here is a finding, not an error.
    pub bound_holds: bool,
}

/// P[a ≤ χ²_k ≤ b].
fn chi2_interval(k: usize, a: f64, b: f64) -> Result<f64, ExperimentError> {
    let s = 0.5 * k as f64;
    Ok(reg_lower_gamma(s, 0.5 * b)? - reg_lower_gamma(s, 0.5 * a)?)
}

fn unit_direction(d: usize, master_seed: u64) -> Result<Vec<f64>, ExperimentError> {
    let mut rng = RngStream::for_purpose(master_seed, Purpose::Direction, 0).rng();
    for _ in 0..MAX_RETRIES {
        let v: Vec<f64> = standard_normal_vec(&mut rng, d);
        let n = norm(&v);
        if n > 0.0 {
            return Ok(v.into_iter().map(|x| x / n).collect());
        }
    }
    Err(invalid("could not draw a non-zero direction"))
}

/// Fresh `G` per trial against one fixed random unit gradient.
pub fn gradient_concentration(
    cfg: &ProjectionConfig<f64>,
    n_trials: usize,
    master_seed: u64,
) -> Result<ConcentrationReport, ExperimentError> {
    cfg.validate()?;
    if n_trials < 1000 {
        return Err(invalid(format!("need at least 1000 trials, got {n_trials}")));
    }
    let grad = unit_direction(cfg.d, master_seed)?;
    let (lo, hi) = (1.0 - cfg.epsilon, 1.0 + cfg.epsilon);
    let hits: Result<Vec<bool>, ExperimentError> = (0..n_trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = RngStream::for_purpose(master_seed, Purpose::Trial, t as u64).rng();
            let len = project_gradient(&grad, cfg, &mut rng)?;
            Ok(lo <= len && len <= hi)
        })
        .collect();
    let empirical_prob = hits?.iter().filter(|&&h| h).count() as f64 / n_trials as f64;
    let stderr = binomial_se(empirical_prob, n_trials);
    let b2 = cfg.beta * cfg.beta;
    let exact_prob = chi2_interval(cfg.k, lo * lo / b2, hi * hi / b2)?;
    let bound = gradient_bound(cfg.k, cfg.epsilon, cfg.beta);
    Ok(ConcentrationReport {
        k: cfg.k,
        d: cfg.d,
        beta: cfg.beta,
        epsilon: cfg.epsilon,
        n_trials,
        empirical_prob,
        stderr,
        exact_prob,
        bound,
        regime: Regime::of(cfg.k, cfg.beta),
        bound_holds: empirical_prob >= bound.raw - 3.0 * stderr,
    })
}

/// Sample moments of `‖Gv‖²/β²` for a fixed unit `v`, which is χ²_k distributed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionMoments {
    pub k: usize,
    pub beta: f64,
    pub n: usize,
    pub mean: f64,
    pub se_mean: f64,
    pub variance: f64,
}

pub fn projection_moments(
    cfg: &ProjectionConfig<f64>,
    n: usize,
    master_seed: u64,
) -> Result<ProjectionMoments, ExperimentError> {
    cfg.validate()?;
    if n < 2 {
        return Err(invalid("need at least two draws"));
    }
    let v = unit_direction(cfg.d, master_seed)?;
    let draws: Result<Vec<f64>, ExperimentError> = (0..n)
        .into_par_iter()
        .map(|t| {
            let mut rng = RngStream::for_purpose(master_seed, Purpose::Trial, t as u64).rng();
            let len = project_gradient(&v, cfg, &mut rng)?;
            Ok(len * len / (cfg.beta * cfg.beta))
        })
        .collect();
    let draws = draws?;
    let (mean, se_mean) = mean_and_se(&draws);
    Ok(ProjectionMoments { k: cfg.k, beta: cfg.beta, n, mean, se_mean, variance: sample_variance(&draws) })
}

#[derive(Serialize)]
struct SurfaceRow {
    beta: f64,
    step: f64,
    mean_dloss: f64,
    stderr: f64,
    trials: usize,
}

/// CSV columns: `beta,step,mean_dloss,stderr,trials`; `beta = 0` rows are the analytic-gradient reference.
pub fn write_surface_csv<W: Write>(out: W, surface: &LossSurface) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(out);
    for c in surface.oracle.iter().chain(&surface.cells) {
        w.serialize(SurfaceRow {
            beta: c.beta,
            step: c.step,
            mean_dloss: c.mean_dloss,
            stderr: c.stderr,
            trials: c.trials,
        })?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Serialize)]
struct ConcentrationRow {
    k: usize,
    d: usize,
    beta: f64,
    epsilon: f64,
    n_trials: usize,
    empirical_prob: f64,
    stderr: f64,
    exact_prob: f64,
    bound: f64,
    bound_vacuous: bool,
    regime: Regime,
    bound_holds: bool,
}

/// CSV columns: `k,d,beta,epsilon,n_trials,empirical_prob,stderr,exact_prob,bound,bound_vacuous,regime,bound_holds`.
pub fn write_concentration_csv<W: Write>(out: W, reports: &[ConcentrationReport]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        w.serialize(ConcentrationRow {
            k: r.k,
            d: r.d,
            beta: r.beta,
            epsilon: r.epsilon,
            n_trials: r.n_trials,
            empirical_prob: r.empirical_prob,
            stderr: r.stderr,
            exact_prob: r.exact_prob,
            bound: r.bound.raw,
            bound_vacuous: r.bound.is_vacuous(),
            regime: r.regime,
            bound_holds: r.bound_holds,
        })?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
