//! Explicit lower bounds for tube-staying probabilities, tails and densities of the
//! log-price in square-root local-stochastic-volatility models, together with the Monte
//! Carlo engine and Heston Fourier oracle used to check them.
//!
//! Bounds are astronomically small numbers (`exp(-e^{10^80})` is typical), so they are
//! carried as [`LogProbability`] values holding `ln(-ln p)` in double-double precision.

// Parameter checks are written as `!(x > 0.0)` so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod curves;
mod error;
pub mod estimate;
pub mod heston;
pub mod logbound;
pub mod model;
pub mod pricing;
pub mod quad;
pub mod simulate;
pub mod stats;
pub mod variational;

pub use error::{Error, Result};
pub use logbound::{DoubleDouble, LogProbability, LogValue};
pub use model::{HypothesisBounds, HypothesisReport, ModelSpec};
