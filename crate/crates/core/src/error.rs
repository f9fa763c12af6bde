use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("pattern parse error at line {line}: {msg}")]
    PatternParse { line: usize, msg: String },

    #[error("dimension {n} exceeds the dense limit {limit}")]
    TooLarge { n: usize, limit: usize },

    #[error("fixed-point iteration diverged after {iterations} iterations (residual {residual:e}); the interaction matrix is likely not a contraction")]
    Diverged { iterations: usize, residual: f64 },

    #[error("eigensolver did not converge on a block of size {block} within {max_iterations} iterations")]
    EigenNonConvergence { block: usize, max_iterations: usize },

    #[error("complementarity check failed: {0}")]
    Complementarity(String),

    #[error("integration aborted at t = {t}: {reason}")]
    IntegrationAbort {
        t: f64,
        reason: String,
        partial: Box<crate::dynamics::TrajectoryRecord>,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Diverged { .. }
                | Error::EigenNonConvergence { .. }
                | Error::Complementarity(_)
                | Error::IntegrationAbort { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
