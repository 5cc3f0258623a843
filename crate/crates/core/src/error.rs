use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite argument {name} = {value}")]
    NonFinite { name: &'static str, value: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive definite (pivot {pivot:e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("rule requires a homoscedastic group pair (shared Omega and eta)")]
    Heteroscedastic,

    #[error("group pair must share tau ({0} vs {1})")]
    TauMismatch(f64, f64),

    #[error("priors must be positive and sum to one, got ({0}, {1})")]
    InvalidPriors(f64, f64),

    #[error("linear rule threshold is unset")]
    ThresholdUnset,

    #[error("degenerate latent moments: delta update denominator is {0:e}")]
    FlatDirection(f64),

    #[error("EM diverged at iteration {iteration}: log-likelihood is {loglik}")]
    Divergence { iteration: usize, loglik: f64 },

    #[error("replication {replication} failed after {attempts} attempts: {last}")]
    ReplicationFailed {
        replication: usize,
        attempts: usize,
        last: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn finite(name: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite { name, value })
    }
}
