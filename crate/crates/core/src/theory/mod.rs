//! Special functions and the closed-form detection / false-positive bounds.

mod bounds;
mod special;

use thiserror::Error;

pub use bounds::{
    general_bound, general_bound_radius, gradient_bound, lemma1_bound, markov_fp_floor, toy_bound,
    toy_escape_probability, Bound, BoundInput, BoundSide,
};
pub use special::{chi_cdf, ln_gamma, reg_lower_gamma, reg_upper_gamma, std_normal_cdf};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TheoryError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("{0} failed to converge")]
    NoConvergence(&'static str),
}
