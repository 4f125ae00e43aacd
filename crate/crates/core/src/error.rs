use thiserror::Error;

use crate::lasso::LassoFit;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not positive definite (pivot {pivot}, value {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("solver did not converge after {iterations} iterations (kkt gap {kkt_gap:e})")]
    NotConverged {
        iterations: usize,
        kkt_gap: f64,
        best: Box<LassoFit>,
    },

    #[error("degenerate denominator for coordinate {j} (value {value:e})")]
    Degenerate { j: usize, value: f64 },

    #[error("every coordinate has a degenerate denominator")]
    AllDegenerate,
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    /// True for failures caused by bad inputs rather than numerics.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Invalid(_) | Error::Dimension(_))
    }
}
