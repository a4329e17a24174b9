use thiserror::Error;

use crate::matcore::MatError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Matrix(#[from] MatError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid channel: {0}")]
    InvalidChannel(String),
    #[error(
        "source violates the covariance constraint E[XX^T] <= S: \
         min eigenvalue of S - Cov(X) is {min_eig:e}"
    )]
    Inadmissible { min_eig: f64 },
    #[error("fixed point not bracketed: r(0) = {r0}, r(1) = {r1}, target entropy = {target}")]
    Bracketing { r0: f64, r1: f64, target: f64 },
    #[error("at least 2 samples are required, got {0}")]
    TooFewSamples(usize),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;
