//! Small summary-statistics helpers shared by the studies.

use serde::{Deserialize, Serialize};

/// Standard error of a Bernoulli proportion estimate.
pub fn binomial_se(p: f64, n: usize) -> f64 {
    if n == 0 {
        return f64::NAN;
    }
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Sample mean and standard error of the mean (unbiased variance).
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Unbiased sample variance.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
}

/// Linear-interpolation percentile (`q` in `[0, 100]`) of an ascending slice.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = (q / 100.0).clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let frac = pos - lo as f64;
            if lo == hi || sorted[lo] == sorted[hi] {
                sorted[lo]
            } else {
                sorted[lo] + frac * (sorted[hi] - sorted[lo])
            }
        }
    }
}

/// `n` points log-spaced over `[lo, hi]`, endpoints included.
pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            let mut out: Vec<f64> = (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect();
            out[0] = lo;
            out[n - 1] = hi;
            // exp/ln round-off must not break ordering
            for i in 1..n {
                out[i] = out[i].max(out[i - 1]);
            }
            out
        }
    }
}

/// Number of entries `<= tau` in an ascending slice.
pub fn count_at_most(sorted: &[f64], tau: f64) -> usize {
    sorted.partition_point(|&x| x <= tau)
}

pub fn sort_floats(xs: &mut [f64]) {
    xs.sort_unstable_by(f64::total_cmp);
}

/// Equal-width histogram; `edges.len() == counts.len() + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Bins the finite values; a zero-width range collapses to one bin.
    pub fn new(values: &[f64], bins: usize) -> Self {
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        if finite.is_empty() || bins == 0 {
            return Self { edges: Vec::new(), counts: Vec::new() };
        }
        let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if lo == hi {
            return Self { edges: vec![lo, hi], counts: vec![finite.len() as u64] };
        }
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|i| if i == bins { hi } else { lo + width * i as f64 }).collect();
        let mut counts = vec![0u64; bins];
        for v in finite {
            let idx = (((v - lo) / width) as usize).min(bins - 1);
            counts[idx] += 1;
        }
        Self { edges, counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_interpolates() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile_sorted(&xs, 0.0), 1.0);
        assert_eq!(percentile_sorted(&xs, 50.0), 3.0);
        assert_eq!(percentile_sorted(&xs, 100.0), 5.0);
        assert!((percentile_sorted(&xs, 5.0) - 1.2).abs() < 1e-12);
        let inf = [1.0, f64::INFINITY];
        assert_eq!(percentile_sorted(&inf, 0.0), 1.0);
    }

    #[test]
    fn logspace_endpoints_and_order() {
        let v = logspace(0.01, 100.0, 40);
        assert_eq!(v.len(), 40);
        assert_eq!(v[0], 0.01);
        assert_eq!(v[39], 100.0);
        assert!(v.windows(2).all(|w| w[0] <= w[1]));
        assert!((v[1] / v[0] - (1e4_f64).powf(1.0 / 39.0)).abs() < 1e-12);
    }

    #[test]
    fn mean_se_and_variance() {
        let (m, se) = mean_and_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0_f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert!((sample_variance(&[1.0, 2.0, 3.0, 4.0]) - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(binomial_se(0.5, 100), 0.05);
    }

    #[test]
    fn histogram_bins() {
        let h = Histogram::new(&[0.0, 0.1, 0.5, 1.0, f64::INFINITY], 2);
        assert_eq!(h.edges, vec![0.0, 0.5, 1.0]);
        assert_eq!(h.counts, vec![2, 2]);
        let flat = Histogram::new(&[2.0; 7], 10);
        assert_eq!(flat.edges, vec![2.0, 2.0]);
        assert_eq!(flat.counts, vec![7]);
    }

    #[test]
    fn count_at_most_includes_ties() {
        let xs = [0.0, 1.0, 1.0, 2.0, f64::INFINITY];
        assert_eq!(count_at_most(&xs, 1.0), 3);
        assert_eq!(count_at_most(&xs, -1.0), 0);
        assert_eq!(count_at_most(&xs, f64::MAX), 4);
    }
}
