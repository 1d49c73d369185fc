use thiserror::Error;

use crate::linalg::MatrixRole;

/// Errors produced by the numerical pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{role} matrix of dim {dim} is not positive definite (Cholesky failed at pivot {pivot})")]
    NotPositiveDefinite {
        role: MatrixRole,
        dim: usize,
        pivot: usize,
    },

    #[error("eigendecomposition of {role} matrix of dim {dim} did not converge")]
    EigenNotConverged { role: MatrixRole, dim: usize },

    #[error("graphical lasso did not converge after {sweeps} sweeps (last delta {last_delta:e})")]
    GlassoNotConverged { sweeps: usize, last_delta: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    /// True for failures caused by the numbers rather than by malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::EigenNotConverged { .. }
                | Error::GlassoNotConverged { .. }
                | Error::Numerical(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
