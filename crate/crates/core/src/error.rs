use thiserror::Error;

/// Errors raised by the bound, simulation and estimation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("|y| = {y} is below the admissible threshold {threshold}")]
    BelowThreshold { y: f64, threshold: f64 },

    #[error("argument {0} lies outside the analyticity strip of the characteristic function")]
    OutsideStrip(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("non-finite coefficient in path {path} at step {step}: x = {x}, v = {v}")]
    NonFinite { path: usize, step: usize, x: f64, v: f64 },

    #[error("price {price} is outside the no-arbitrage band [{lower}, {upper})")]
    Arbitrage { price: f64, lower: f64, upper: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("{0} is not computable without user-supplied placeholder constants")]
    NotComputable(&'static str),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("solver did not converge after {iterations} iterations (gradient norm {residual:e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        last_iterate: Vec<f64>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
