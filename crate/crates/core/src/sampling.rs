//! Randomness: reproducible streams, toy-model query distributions, random
//! projections of the gradient, and the finite-difference gradient estimator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{dot, norm, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("invalid sampling config: {0}")]
    InvalidConfig(String),
    #[error("expected dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("gradient is zero")]
    ZeroGradient,
}

/// Namespaces for stream ids so independent uses of one master seed never collide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum Purpose {
    Trial = 1,
    Natural = 2,
    Perturbation = 3,
    Dataset = 4,
    Matrix = 5,
    Direction = 6,
    Pairing = 7,
}

/// A `(master_seed, stream_id)` pair that fully determines a random sequence.
///
/// Each stream is a distinct ChaCha8 stream under the master key, so trial
/// results never depend on scheduling or on how many other streams exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self { master_seed, stream_id }
    }

    /// Stream `index` within a purpose namespace.
    pub fn for_purpose(master_seed: u64, purpose: Purpose, index: u64) -> Self {
        debug_assert!(index < 1 << 48);
        Self::new(master_seed, (purpose as u64) << 48 | index)
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Draws `n` standard normal values.
pub fn standard_normal_vec<T, R>(rng: &mut R, n: usize) -> Vec<T>
where
    T: Real,
    StandardNormal: Distribution<T>,
    R: Rng + ?Sized,
{
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Toy-model parameters: natural queries ~ 𝒩(p, I σ²), perturbations ~ 𝒩(0, I β²).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModelConfig<T> {
    pub d: usize,
    pub sigma: T,
    pub beta: T,
    pub center: Vec<i64>,
}

impl<T: Real> ToyModelConfig<T> {
    /// Config centred at the origin.
    pub fn new(d: usize, sigma: T, beta: T) -> Result<Self, SamplingError> {
        Self::with_center(sigma, beta, vec![0; d])
    }

    pub fn with_center(sigma: T, beta: T, center: Vec<i64>) -> Result<Self, SamplingError> {
        let cfg = Self { d: center.len(), sigma, beta, center };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SamplingError> {
        if self.d == 0 || self.center.len() != self.d {
            return Err(SamplingError::InvalidConfig("d must be >= 1 and match the center".into()));
        }
        if !(self.sigma > T::zero()) || !(self.beta > T::zero()) {
            return Err(SamplingError::InvalidConfig("sigma and beta must be > 0".into()));
        }
        Ok(())
    }
}

/// Natural query `x ~ 𝒩(p, I_d σ²)`.
pub fn sample_natural<T, R>(cfg: &ToyModelConfig<T>, rng: &mut R) -> Vec<T>
where
    T: Real,
    StandardNormal: Distribution<T>,
    R: Rng + ?Sized,
{
    cfg.center
        .iter()
        .map(|&p| {
            let z: T = rng.sample(StandardNormal);
            T::lit(p as f64) + cfg.sigma * z
        })
        .collect()
}

/// Attack perturbation `δ ~ 𝒩(0, I_d β²)`.
pub fn sample_perturbation<T, R>(cfg: &ToyModelConfig<T>, rng: &mut R) -> Vec<T>
where
    T: Real,
    StandardNormal: Distribution<T>,
    R: Rng + ?Sized,
{
    (0..cfg.d)
        .map(|_| {
            let z: T = rng.sample(StandardNormal);
            cfg.beta * z
        })
        .collect()
}

/// Random projection `G` with `k` rows drawn from 𝒩(0, I_d β²).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig<T> {
    pub k: usize,
    pub d: usize,
    pub beta: T,
    pub epsilon: T,
}

impl<T: Real> ProjectionConfig<T> {
    pub fn new(k: usize, d: usize, beta: T, epsilon: T) -> Result<Self, SamplingError> {
        let cfg = Self { k, d, beta, epsilon };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SamplingError> {
        if self.k == 0 || self.d == 0 {
            return Err(SamplingError::InvalidConfig("k and d must be >= 1".into()));
        }
        if !(self.beta > T::zero()) {
            return Err(SamplingError::InvalidConfig("beta must be > 0".into()));
        }
        if !(self.epsilon >= T::zero() && self.epsilon <= T::one()) {
            return Err(SamplingError::InvalidConfig("epsilon must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// `‖G∇‖` for one fresh draw of `G`.
pub fn project_gradient<T, R>(grad: &[T], cfg: &ProjectionConfig<T>, rng: &mut R) -> Result<T, SamplingError>
where
    T: Real,
    StandardNormal: Distribution<T>,
    R: Rng + ?Sized,
{
    if grad.len() != cfg.d {
        return Err(SamplingError::DimensionMismatch { expected: cfg.d, got: grad.len() });
    }
    if grad.iter().all(|g| g.is_zero()) {
        return Err(SamplingError::ZeroGradient);
    }
    let mut sum_sq = T::zero();
    for _ in 0..cfg.k {
        let row_dot = grad.iter().fold(T::zero(), |acc, &g| {
            let z: T = rng.sample(StandardNormal);
            acc + g * z
        });
        let proj = cfg.beta * row_dot;
        sum_sq = sum_sq + proj * proj;
    }
    Ok(sum_sq.sqrt())
}

/// Analytic loss used in place of a classifier loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ToyLoss<T> {
    /// `½‖x‖²`
    Quadratic,
    /// `log Σᵢ exp(wᵢᵀx)`
    LogSumExp { weights: Vec<Vec<T>> },
}

impl<T: Real> ToyLoss<T> {
    pub fn log_sum_exp(weights: Vec<Vec<T>>) -> Result<Self, SamplingError> {
        if weights.len() < 2 {
            return Err(SamplingError::InvalidConfig("log-sum-exp needs at least 2 rows".into()));
        }
        let d = weights[0].len();
        if d == 0 || weights.iter().any(|w| w.len() != d) {
            return Err(SamplingError::InvalidConfig("weight rows must share a positive length".into()));
        }
        Ok(Self::LogSumExp { weights })
    }

    /// Log-sum-exp loss with `m × d` weights drawn from 𝒩(0, scale²).
    pub fn random_log_sum_exp<R>(m: usize, d: usize, scale: T, rng: &mut R) -> Result<Self, SamplingError>
    where
        StandardNormal: Distribution<T>,
        R: Rng + ?Sized,
    {
        let weights =
            (0..m).map(|_| standard_normal_vec::<T, R>(rng, d).into_iter().map(|z| z * scale).collect()).collect();
        Self::log_sum_exp(weights)
    }

    /// Input dimension, if the loss fixes one.
    pub fn dim(&self) -> Option<usize> {
        match self {
            Self::Quadratic => None,
            Self::LogSumExp { weights } => Some(weights[0].len()),
        }
    }

    fn check_dim(&self, x: &[T]) -> Result<(), SamplingError> {
        match self.dim() {
            Some(d) if d != x.len() => Err(SamplingError::DimensionMismatch { expected: d, got: x.len() }),
            _ => Ok(()),
        }
    }

    pub fn loss(&self, x: &[T]) -> Result<T, SamplingError> {
        self.check_dim(x)?;
        Ok(match self {
            Self::Quadratic => T::lit(0.5) * dot(x, x),
            Self::LogSumExp { weights } => {
                let logits: Vec<T> = weights.iter().map(|w| dot(w, x)).collect();
                log_sum_exp(&logits)
            }
        })
    }

    /// Loss value and its analytic gradient.
    pub fn loss_and_grad(&self, x: &[T]) -> Result<(T, Vec<T>), SamplingError> {
        self.check_dim(x)?;
        Ok(match self {
            Self::Quadratic => (T::lit(0.5) * dot(x, x), x.to_vec()),
            Self::LogSumExp { weights } => {
                let logits: Vec<T> = weights.iter().map(|w| dot(w, x)).collect();
                let lse = log_sum_exp(&logits);
                let mut grad = vec![T::zero(); x.len()];
                for (w, &l) in weights.iter().zip(&logits) {
                    let p = (l - lse).exp();
                    for (g, &wi) in grad.iter_mut().zip(w) {
                        *g = *g + p * wi;
                    }
                }
                (lse, grad)
            }
        })
    }
}

fn log_sum_exp<T: Real>(logits: &[T]) -> T {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    max + logits.iter().fold(T::zero(), |acc, &l| acc + (l - max).exp()).ln()
}

/// Finite-difference scheme for the gradient estimator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FiniteDifference {
    /// `(L(x+βδ) − L(x−βδ)) / 2β`
    #[default]
    Antithetic,
    /// `(L(x+βδ) − L(x)) / β`
    OneSided,
}

/// Gaussian-basis finite-difference gradient estimate with `q` probe directions
/// `δᵢ ~ 𝒩(0, I_d)` at smoothing radius `beta`.
pub fn nes_estimate<T, R>(
    loss: &ToyLoss<T>,
    x: &[T],
    q: usize,
    beta: T,
    scheme: FiniteDifference,
    rng: &mut R,
) -> Result<Vec<T>, SamplingError>
where
    T: Real,
    StandardNormal: Distribution<T>,
    R: Rng + ?Sized,
{
    if q == 0 {
        return Err(SamplingError::InvalidConfig("q must be >= 1".into()));
    }
    if !(beta > T::zero()) {
        return Err(SamplingError::InvalidConfig("beta must be > 0".into()));
    }
    let base = match scheme {
        FiniteDifference::OneSided => Some(loss.loss(x)?),
        FiniteDifference::Antithetic => {
            loss.check_dim(x)?;
            None
        }
    };
    let d = x.len();
    let mut estimate = vec![T::zero(); d];
    let mut probe = vec![T::zero(); d];
    for _ in 0..q {
        let delta: Vec<T> = standard_normal_vec(rng, d);
        for ((p, &xi), &di) in probe.iter_mut().zip(x).zip(&delta) {
            *p = xi + beta * di;
        }
        let plus = loss.loss(&probe)?;
        let coeff = match base {
            Some(l0) => (plus - l0) / beta,
            None => {
                for ((p, &xi), &di) in probe.iter_mut().zip(x).zip(&delta) {
                    *p = xi - beta * di;
                }
                (plus - loss.loss(&probe)?) / (T::lit(2.0) * beta)
            }
        };
        for (e, &di) in estimate.iter_mut().zip(&delta) {
            *e = *e + coeff * di;
        }
    }
    let qt = T::count(q);
    Ok(estimate.into_iter().map(|e| e / qt).collect())
}

/// Cosine similarity; zero when either vector vanishes.
pub fn cosine_similarity<T: Real>(a: &[T], b: &[T]) -> T {
    let denom = norm(a) * norm(b);
    if denom.is_zero() {
        T::zero()
    } else {
        dot(a, b) / denom
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<f64> = standard_normal_vec(&mut RngStream::new(7, 3).rng(), 16);
        let b: Vec<f64> = standard_normal_vec(&mut RngStream::new(7, 3).rng(), 16);
        let c: Vec<f64> = standard_normal_vec(&mut RngStream::new(7, 4).rng(), 16);
        let d: Vec<f64> = standard_normal_vec(&mut RngStream::new(8, 3).rng(), 16);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
        let p = RngStream::for_purpose(1, Purpose::Natural, 5);
        assert_ne!(p, RngStream::for_purpose(1, Purpose::Perturbation, 5));
    }

    #[test]
    fn tiny_sigma_sample_is_center() {
        let cfg = ToyModelConfig::with_center(1e-300_f64, 1.0, vec![3, -2, 0]).unwrap();
        let x = sample_natural(&cfg, &mut RngStream::new(0, 0).rng());
        for (v, want) in x.iter().zip([3.0, -2.0, 0.0]) {
            assert!((v - want).abs() < 1e-290);
        }
    }

    #[test]
    fn config_validation() {
        assert!(ToyModelConfig::new(0, 0.1_f64, 0.1).is_err());
        assert!(ToyModelConfig::new(2, 0.0_f64, 0.1).is_err());
        assert!(ProjectionConfig::new(1, 2, 0.1_f64, 1.5).is_err());
        assert!(ProjectionConfig::new(0, 2, 0.1_f64, 0.5).is_err());
        assert!(ToyLoss::log_sum_exp(vec![vec![1.0_f64]]).is_err());
        assert!(ToyLoss::log_sum_exp(vec![vec![1.0_f64], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn natural_moments() {
        let n = 100_000;
        let sigma = 0.7_f64;
        let cfg = ToyModelConfig::with_center(sigma, 0.1, vec![2, -5]).unwrap();
        let mut rng = RngStream::new(11, 0).rng();
        let mut sum = [0.0; 2];
        let mut sum_sq = [0.0; 2];
        for _ in 0..n {
            let x = sample_natural(&cfg, &mut rng);
            for j in 0..2 {
                sum[j] += x[j];
                sum_sq[j] += x[j] * x[j];
            }
        }
        for j in 0..2 {
            let mean = sum[j] / n as f64;
            let var = sum_sq[j] / n as f64 - mean * mean;
            assert!((mean - cfg.center[j] as f64).abs() < 4.0 * sigma / (n as f64).sqrt());
            assert!((var / (sigma * sigma) - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn perturbation_moments() {
        let n = 100_000;
        let beta = 0.3_f64;
        let cfg = ToyModelConfig::new(3, 1.0, beta).unwrap();
        let mut rng = RngStream::new(12, 0).rng();
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..n {
            let d = sample_perturbation(&cfg, &mut rng);
            sum += d[1];
            sum_sq += d[1] * d[1];
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        assert!(mean.abs() < 4.0 * beta / (n as f64).sqrt());
        assert!((var / (beta * beta) - 1.0).abs() < 0.05);
    }

    #[test]
    fn gaussian_passes_kolmogorov_smirnov() {
        let n = 10_000;
        let cfg = ToyModelConfig::with_center(2.5_f64, 1.0, vec![4]).unwrap();
        let mut rng = RngStream::new(99, 1).rng();
        let mut z: Vec<f64> = (0..n).map(|_| (sample_natural(&cfg, &mut rng)[0] - 4.0) / 2.5).collect();
        z.sort_by(f64::total_cmp);
        let ks = z
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let f = crate::theory::std_normal_cdf(v);
                (f - i as f64 / n as f64).abs().max((i as f64 + 1.0) / n as f64 - f)
            })
            .fold(0.0, f64::max);
        // 1% critical value ≈ 1.628 / √n
        assert!(ks < 1.628 / (n as f64).sqrt(), "KS statistic {ks}");
    }

    #[test]
    fn projection_is_chi_square() {
        let n = 100_000;
        for (k, beta) in [(5usize, 0.2_f64), (20, 1.0)] {
            let d = 8;
            let cfg = ProjectionConfig::new(k, d, beta, 0.5).unwrap();
            let mut v = vec![0.0; d];
            v[0] = 0.6;
            v[3] = -0.8;
            let mut rng = RngStream::new(5, k as u64).rng();
            let samples: Vec<f64> = (0..n)
                .map(|_| {
                    let r = project_gradient(&v, &cfg, &mut rng).unwrap();
                    r * r / (beta * beta)
                })
                .collect();
            let mean = samples.iter().sum::<f64>() / n as f64;
            let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n as f64 - 1.0);
            let kf = k as f64;
            assert!((mean - kf).abs() < 3.0 * (2.0 * kf / n as f64).sqrt(), "mean {mean}");
            let se_var = ((8.0 * kf * kf + 48.0 * kf) / n as f64).sqrt();
            assert!((var - 2.0 * kf).abs() < 3.0 * se_var, "var {var}");
        }
    }

    #[test]
    fn single_row_projection_std_is_beta() {
        let n = 100_000;
        let beta = 0.4_f64;
        let cfg = ProjectionConfig::new(1, 4, beta, 0.5).unwrap();
        let unit = [0.5_f64, 0.5, 0.5, 0.5];
        let mut rng = RngStream::new(3, 3).rng();
        let sum_sq: f64 = (0..n).map(|_| project_gradient(&unit, &cfg, &mut rng).unwrap().powi(2)).sum();
        let std = (sum_sq / n as f64).sqrt();
        assert!((std / beta - 1.0).abs() < 0.01, "std {std}");
    }

    #[test]
    fn projection_rejects_zero_gradient() {
        let cfg = ProjectionConfig::new(3, 2, 0.1_f64, 0.5).unwrap();
        let mut rng = RngStream::new(0, 0).rng();
        assert_eq!(project_gradient(&[0.0, 0.0], &cfg, &mut rng), Err(SamplingError::ZeroGradient));
        assert!(matches!(project_gradient(&[1.0], &cfg, &mut rng), Err(SamplingError::DimensionMismatch { .. })));
    }

    #[test]
    fn quadratic_loss_values() {
        let q = ToyLoss::<f64>::Quadratic;
        assert_eq!(q.loss_and_grad(&[0.0, 0.0]).unwrap(), (0.0, vec![0.0, 0.0]));
        assert_eq!(q.loss_and_grad(&[3.0, 4.0]).unwrap(), (12.5, vec![3.0, 4.0]));
    }

    fn central_difference(loss: &ToyLoss<f64>, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|j| {
                let mut a = x.to_vec();
                let mut b = x.to_vec();
                a[j] += h;
                b[j] -= h;
                (loss.loss(&a).unwrap() - loss.loss(&b).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn lse_gradient_matches_finite_differences() {
        let mut rng = RngStream::new(21, 0).rng();
        let loss = ToyLoss::random_log_sum_exp(5, 6, 1.0_f64, &mut rng).unwrap();
        for _ in 0..20 {
            let x: Vec<f64> = standard_normal_vec(&mut rng, 6);
            let (_, g) = loss.loss_and_grad(&x).unwrap();
            let fd = central_difference(&loss, &x, 1e-5);
            let err = crate::scalar::distance(&g, &fd) / norm(&g);
            assert!(err < 1e-6, "relative error {err}");
        }
        assert!(matches!(loss.loss_and_grad(&[0.0; 3]), Err(SamplingError::DimensionMismatch { .. })));
    }

    #[test]
    fn lse_is_numerically_stable() {
        let loss = ToyLoss::log_sum_exp(vec![vec![1000.0_f64], vec![999.0]]).unwrap();
        let (l, g) = loss.loss_and_grad(&[1.0]).unwrap();
        assert!((l - (1000.0 + (1.0 + (-1.0_f64).exp()).ln())).abs() < 1e-9);
        assert!(g[0].is_finite());
    }

    #[test]
    fn quadratic_nes_is_beta_independent() {
        let x = [0.3_f64, -1.2, 2.0, 0.7];
        let loss = ToyLoss::Quadratic;
        let stream = RngStream::new(4, 4);
        let g_small = nes_estimate(&loss, &x, 50, 1e-3, FiniteDifference::Antithetic, &mut stream.rng()).unwrap();
        let g_large = nes_estimate(&loss, &x, 50, 10.0, FiniteDifference::Antithetic, &mut stream.rng()).unwrap();
        // each antithetic difference equals δᵀx exactly, whatever β
        let mut rng = stream.rng();
        let mut want = [0.0; 4];
        for _ in 0..50 {
            let delta: Vec<f64> = standard_normal_vec(&mut rng, 4);
            let c = dot(&delta, &x);
            for j in 0..4 {
                want[j] += c * delta[j] / 50.0;
            }
        }
        for j in 0..4 {
            assert!((g_small[j] - want[j]).abs() < 1e-9);
            assert!((g_large[j] - want[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn lse_nes_aligns_with_gradient() {
        let mut rng = RngStream::new(31, 0).rng();
        let d = 16;
        let loss = ToyLoss::random_log_sum_exp(8, d, 1.0_f64, &mut rng).unwrap();
        let x: Vec<f64> = standard_normal_vec(&mut rng, d);
        let (_, g) = loss.loss_and_grad(&x).unwrap();
        let est = nes_estimate(&loss, &x, 10_000, 1e-4, FiniteDifference::Antithetic, &mut rng).unwrap();
        assert!(cosine_similarity(&est, &g) > 0.7);
        let one_sided = nes_estimate(&loss, &x, 10_000, 1e-4, FiniteDifference::OneSided, &mut rng).unwrap();
        assert!(cosine_similarity(&one_sided, &g) > 0.7);
    }

    #[test]
    fn lse_gradient_at_origin_is_mean_row() {
        let weights = vec![vec![1.0_f64, 2.0, 0.0], vec![-1.0, 2.0, 1.0], vec![3.0, 2.0, -1.0]];
        let loss = ToyLoss::log_sum_exp(weights).unwrap();
        let (l, g) = loss.loss_and_grad(&[0.0; 3]).unwrap();
        assert!((l - 3.0_f64.ln()).abs() < 1e-15);
        let mean = [1.0, 2.0, 0.0];
        for j in 0..3 {
            assert!((g[j] - mean[j]).abs() < 1e-15);
        }
        let mut rng = RngStream::new(32, 0).rng();
        let est = nes_estimate(&loss, &[0.0; 3], 20_000, 1e-4, FiniteDifference::Antithetic, &mut rng).unwrap();
        assert!(crate::scalar::distance(&est, &mean) < 0.1);
    }

    #[test]
    fn nes_rejects_bad_inputs() {
        let mut rng = RngStream::new(0, 0).rng();
        let loss = ToyLoss::<f64>::Quadratic;
        assert!(nes_estimate(&loss, &[1.0], 0, 0.1, FiniteDifference::Antithetic, &mut rng).is_err());
        assert!(nes_estimate(&loss, &[1.0], 1, 0.0, FiniteDifference::Antithetic, &mut rng).is_err());
    }
}
