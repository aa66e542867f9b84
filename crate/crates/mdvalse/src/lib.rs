//! Variational Bayesian line spectral estimation for D-dimensional complex
//! sinusoid mixtures: model-order selection, frequency posteriors and weight
//! recovery from a single noisy tensor, plus synthetic-data generation,
//! evaluation metrics, a Monte-Carlo benchmark harness and an independent
//! oracle suite.

// Validation guards are written as negated comparisons (`!(x > 0.0)`) on
// purpose: unlike the inverted operator, they reject NaN inputs.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod circstats;
pub mod error;
pub mod inference;
pub mod metrics;
pub mod ndfft;
pub mod scenario;
pub mod selfcheck;
pub mod tensor;

pub use error::{Error, Result};
