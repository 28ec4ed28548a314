//! Linear extractor `x ↦ Mx` with exactly known distortion constants.

use nalgebra::{DMatrix, DVector};

use crate::sampling::{standard_normal_vec, Purpose, RngStream};

use super::{Feature, FeatureError, LinearConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearExtractor {
    matrix: DMatrix<f64>,
    sigma_min: f64,
    sigma_max: f64,
}

impl LinearExtractor {
    /// Wraps `matrix` (output_dim × input_dim); it must have full rank.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self, FeatureError> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(FeatureError::InvalidConfig("matrix must be non-empty".into()));
        }
        let singular = matrix.clone().svd(false, false).singular_values;
        let sigma_max = singular.max();
        let sigma_min = singular.min();
        let tol = f64::EPSILON * sigma_max * matrix.nrows().max(matrix.ncols()) as f64;
        if !(sigma_min > tol) {
            return Err(FeatureError::RankDeficient(sigma_min));
        }
        Ok(Self { matrix, sigma_min, sigma_max })
    }

    /// `c · I_d`.
    pub fn scaled_identity(d: usize, c: f64) -> Result<Self, FeatureError> {
        Self::new(DMatrix::from_diagonal_element(d, d, c))
    }

    /// Singular values log-spaced in `[scale, scale · κ]`; with a seed the
    /// singular vectors are Haar-random rotations, otherwise the standard basis.
    pub fn from_config(cfg: &LinearConfig) -> Result<Self, FeatureError> {
        let (rows, cols) = (cfg.output_dim, cfg.input_dim);
        let rank = rows.min(cols);
        let mut diag = DMatrix::zeros(rows, cols);
        for i in 0..rank {
            let t = if rank == 1 { 0.0 } else { i as f64 / (rank - 1) as f64 };
            diag[(i, i)] = cfg.scale * cfg.condition_number.powf(t);
        }
        let matrix = match cfg.seed {
            None => diag,
            Some(seed) => {
                let left = random_orthogonal(rows, RngStream::for_purpose(seed, Purpose::Matrix, 0));
                let right = random_orthogonal(cols, RngStream::for_purpose(seed, Purpose::Matrix, 1));
                left * diag * right.transpose()
            }
        };
        Self::new(matrix)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn input_dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Smallest singular value.
    pub fn k_lower(&self) -> f64 {
        self.sigma_min
    }

    /// Largest singular value.
    pub fn k_upper(&self) -> f64 {
        self.sigma_max
    }

    pub fn lipschitz_ratio(&self) -> f64 {
        self.sigma_max / self.sigma_min
    }

    /// The lower constant holds for every pair only when the map has no kernel.
    pub fn lower_bound_is_global(&self) -> bool {
        self.output_dim() >= self.input_dim()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>, FeatureError> {
        if x.len() != self.input_dim() {
            return Err(FeatureError::DimensionMismatch { left: self.input_dim(), right: x.len() });
        }
        let out = &self.matrix * DVector::from_column_slice(x);
        Ok(out.as_slice().to_vec())
    }
}

fn random_orthogonal(n: usize, stream: RngStream) -> DMatrix<f64> {
    let mut rng = stream.rng();
    let gauss = DMatrix::from_vec(n, n, standard_normal_vec(&mut rng, n * n));
    let qr = gauss.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// `Mx` as a real-vector feature.
pub fn linear_extract(x: &[f64], ext: &LinearExtractor) -> Result<Feature, FeatureError> {
    Ok(Feature::RealVector(ext.apply(x)?))
}
