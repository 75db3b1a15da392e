use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not positive definite (pivot {pivot} of {dim}: {value:.3e})")]
    NotPositiveDefinite { dim: usize, pivot: usize, value: f64 },

    #[error("rank-deficient design: {0}")]
    RankDeficient(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("REML did not converge after {iterations} iterations (loglik {loglik:.6}, gradient norm {grad_norm:.3e})")]
    NonConvergence {
        iterations: usize,
        loglik: f64,
        grad_norm: f64,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
