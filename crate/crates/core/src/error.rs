use thiserror::Error;

use crate::lattice::LatticePoint;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty region")]
    EmptyRegion,

    #[error("site {0} is outside the environment region")]
    OutsideRegion(LatticePoint),

    #[error("kernel row undefined at {0}")]
    KernelUndefined(LatticePoint),

    #[error("site distribution outside P_eps: {0}")]
    OutsideBox(String),

    #[error("chain cannot leave the domain from {0}")]
    NonExiting(LatticePoint),

    #[error("linear solve did not converge: residual {residual:e} after {iterations} iterations")]
    NoConvergence { residual: f64, iterations: usize },

    #[error("index mismatch between operators: {0}")]
    IndexMismatch(String),

    #[error("Monte Carlo step cap hit on {capped} of {paths} paths")]
    StepCapExceeded { capped: usize, paths: usize },

    #[error("resource guard: {0}")]
    ResourceGuard(String),

    #[error("divergent series: operator norm {0} >= 1")]
    Divergent(f64),

    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
