use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    Lattice(String),
    #[error("grid of {grid} points per axis cannot resolve {needed} (cutoff {n})")]
    GridTooSmall { grid: usize, needed: usize, n: usize },
    #[error("lattice mismatch: {0}")]
    Mismatch(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("not converged: {0}")]
    NotConverged(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}
