//! Numerical laboratory for stateful defenses against query-based black-box
//! attacks: feature extractors, a threshold detector, query distributions,
//! closed-form detection/false-positive bounds and Monte Carlo validation.
//!
//! The closed-form math is generic over [`Real`] (`f32` or `f64`); the
//! experiment pipeline runs in `f64`, and the aliases below name those
//! concrete instantiations.

pub mod data_io;
pub mod defense;
pub mod experiments;
pub mod extractors;
pub mod imagekit;
pub mod sampling;
pub mod scalar;
pub mod theory;

use thiserror::Error;

pub use scalar::Real;

/// Scalar used by experiments and the CLI.
pub type Float = f64;

pub type BoundInput = theory::BoundInput<Float>;
pub type Bound = theory::Bound<Float>;
pub type ToyModelConfig = sampling::ToyModelConfig<Float>;
pub type ProjectionConfig = sampling::ProjectionConfig<Float>;
pub type ToyLoss = sampling::ToyLoss<Float>;

/// Single-precision variants of the closed-form types.
pub mod f32 {
    pub type BoundInput = crate::theory::BoundInput<f32>;
    pub type Bound = crate::theory::Bound<f32>;
    pub type ToyModelConfig = crate::sampling::ToyModelConfig<f32>;
    pub type ProjectionConfig = crate::sampling::ProjectionConfig<f32>;
    pub type ToyLoss = crate::sampling::ToyLoss<f32>;
}

/// Union of every module's error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Image(#[from] imagekit::ImageError),
    #[error(transparent)]
    Feature(#[from] extractors::FeatureError),
    #[error(transparent)]
    Defense(#[from] defense::DefenseError),
    #[error(transparent)]
    Sampling(#[from] sampling::SamplingError),
    #[error(transparent)]
    Theory(#[from] theory::TheoryError),
    #[error(transparent)]
    Experiment(#[from] experiments::ExperimentError),
    #[error(transparent)]
    Data(#[from] data_io::DataError),
}

impl Error {
    /// True when the error stems from invalid parameters rather than data or I/O.
    pub fn is_config(&self) -> bool {
        use experiments::ExperimentError as E;
        match self {
            Self::Feature(e) | Self::Experiment(E::Feature(e)) => {
                matches!(e, extractors::FeatureError::InvalidConfig(_))
            }
            Self::Sampling(sampling::SamplingError::InvalidConfig(_))
            | Self::Theory(theory::TheoryError::Domain(_))
            | Self::Image(imagekit::ImageError::BadSigma(_) | imagekit::ImageError::InvalidDims { .. })
            | Self::Defense(defense::DefenseError::BadThreshold(_) | defense::DefenseError::ZeroCapacity)
            | Self::Data(data_io::DataError::InvalidParams(_))
            | Self::Experiment(
                E::InvalidConfig(_)
                | E::Sampling(sampling::SamplingError::InvalidConfig(_))
                | E::Theory(theory::TheoryError::Domain(_)),
            ) => true,
            _ => false,
        }
    }
}
