//! Error type shared by all numerical kernels.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite entries: {0}")]
    NonFinite(String),
    #[error("weight is not symmetric positive definite: {0}")]
    NotSpd(String),
    #[error("operator is not stable: {0}")]
    NotStable(String),
    #[error("spectrum too close to the imaginary axis: {0}")]
    NotHyperbolic(String),
    #[error("iteration did not converge: {0}")]
    NoConvergence(String),
    #[error("rank deficiency: {0}")]
    RankDeficient(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("stabilizability/detectability failure: {0}")]
    NotStabilizable(String),
    #[error("line search failed: {0}")]
    LineSearch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("projector leakage: {0}")]
    ProjectorLeakage(String),
    #[error("simulation diverged: {0}")]
    Diverged(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
