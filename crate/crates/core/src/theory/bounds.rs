//! Closed-form detection / false-positive bounds.

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

use super::special::{reg_lower_gamma, std_normal_cdf};
use super::TheoryError;

/// Which side of a probability a bound constrains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundSide {
    /// The probability is at most `raw`; vacuous once `raw >= 1`.
    Upper,
    /// The probability is at least `raw`; vacuous once `raw <= 0`.
    Lower,
}

/// A bound on a probability, kept unclamped so vacuous values stay visible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound<T> {
    pub raw: T,
    pub side: BoundSide,
}

impl<T: Real> Bound<T> {
    pub fn upper(raw: T) -> Self {
        Self { raw, side: BoundSide::Upper }
    }

    pub fn lower(raw: T) -> Self {
        Self { raw, side: BoundSide::Lower }
    }

    /// Value clamped to `[0, 1]`.
    pub fn value(&self) -> T {
        self.raw.max(T::zero()).min(T::one())
    }

    pub fn is_vacuous(&self) -> bool {
        match self.side {
            BoundSide::Upper => !(self.raw < T::one()),
            BoundSide::Lower => !(self.raw > T::zero()),
        }
    }
}

/// Parameters feeding the general (Lipschitz) bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInput<T> {
    /// Input dimension.
    pub d: usize,
    /// Perturbation std dev.
    pub beta: T,
    /// False-positive rate in `[0, 1)`.
    pub alpha_fp: T,
    /// `K_U / K_L`, at least 1.
    pub lipschitz_ratio: T,
    /// Expected distance between two natural queries.
    pub spread: T,
    pub k: usize,
    pub epsilon: T,
    /// Natural-query std dev; carried for bookkeeping only.
    pub sigma: T,
}

impl<T: Real> BoundInput<T> {
    pub fn validate(&self) -> Result<(), TheoryError> {
        if self.d == 0 {
            return Err(TheoryError::Domain("d must be >= 1".into()));
        }
        if !(self.beta > T::zero()) {
            return Err(TheoryError::Domain(format!("beta must be > 0, got {}", self.beta)));
        }
        if !(self.alpha_fp >= T::zero() && self.alpha_fp < T::one()) {
            return Err(TheoryError::Domain(format!("alpha_fp must lie in [0, 1), got {}", self.alpha_fp)));
        }
        if !(self.lipschitz_ratio >= T::one()) {
            return Err(TheoryError::Domain(format!("lipschitz ratio must be >= 1, got {}", self.lipschitz_ratio)));
        }
        if !(self.spread > T::zero()) {
            return Err(TheoryError::Domain(format!("spread must be > 0, got {}", self.spread)));
        }
        if !(self.epsilon >= T::zero() && self.epsilon <= T::one()) {
            return Err(TheoryError::Domain(format!("epsilon must lie in [0, 1], got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Detection-rate upper bound for the quantization toy model:
/// `1 − (2 − 2Φ(0.5/β))^d · (1 − α_fp)`, clamped to `[0, 1]`.
///
/// `beta == 0` is treated as the limit β → 0⁺, giving 1.
pub fn toy_bound<T: Real>(d: usize, beta: T, alpha_fp: T) -> T {
    let escape = if beta > T::zero() {
        let two = T::lit(2.0);
        two - two * std_normal_cdf(T::lit(0.5) / beta)
    } else {
        T::zero()
    };
    let exponent = i32::try_from(d).unwrap_or(i32::MAX);
    let raw = T::one() - escape.powi(exponent) * (T::one() - alpha_fp);
    raw.max(T::zero()).min(T::one())
}

/// Per-coordinate escape probability P[|δ_i| > 0.5] for δ_i ~ 𝒩(0, β²).
pub fn toy_escape_probability<T: Real>(beta: T) -> T {
    if !(beta > T::zero()) {
        return T::zero();
    }
    let two = T::lit(2.0);
    two - two * std_normal_cdf(T::lit(0.5) / beta)
}

/// The argument `z = (K_U/K_L) · (M_D/β) · 1/(1 − α_fp)` of the general bound.
pub fn general_bound_radius<T: Real>(input: &BoundInput<T>) -> T {
    input.lipschitz_ratio * input.spread / input.beta / (T::one() - input.alpha_fp)
}

/// Detection-rate upper bound for a bi-Lipschitz extractor: `P(d/2, z²/2)`.
pub fn general_bound<T: Real>(input: &BoundInput<T>) -> Result<T, TheoryError> {
    input.validate()?;
    let z = general_bound_radius(input);
    let half = T::lit(0.5);
    reg_lower_gamma(half * T::count(input.d), half * z * z)
}

/// Lower bound on α_fp obtained from Markov's inequality at threshold `tau`:
/// `α_fp ≥ 1 − K_U·M_D/τ`. Vacuous unless `τ > K_U·M_D`.
pub fn markov_fp_floor<T: Real>(tau: T, k_upper: T, spread: T) -> Bound<T> {
    if !(tau > T::zero()) {
        return Bound::lower(T::neg_infinity());
    }
    Bound::lower(T::one() - k_upper * spread / tau)
}

/// Lower bound on P[(1−ε)‖∇‖ ≤ ‖G∇‖ ≤ (1+ε)‖∇‖]:
/// `1 − 2·exp(−k − (1+ε)/(2β²))`. Returned unclamped.
pub fn gradient_bound<T: Real>(k: usize, epsilon: T, beta: T) -> Bound<T> {
    let two = T::lit(2.0);
    let exponent = -T::count(k) - (T::one() + epsilon) / (two * beta * beta);
    Bound::lower(T::one() - two * exponent.exp())
}

/// Upper bound on P[|‖Gv‖² − 1| > ε]: `2·exp(−(k + (ε+1)/(2σ²)))`. Returned unclamped.
pub fn lemma1_bound<T: Real>(k: usize, epsilon: T, sigma: T) -> Bound<T> {
    let two = T::lit(2.0);
    let exponent = -(T::count(k) + (epsilon + T::one()) / (two * sigma * sigma));
    Bound::upper(two * exponent.exp())
}
