use thiserror::Error;

pub type Result<T> = std::result::Result<T, ColError>;

#[derive(Debug, Error)]
pub enum ColError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("point lies outside the decision set (violation {violation:e})")]
    Domain { violation: f64 },

    #[error("invalid decision set: {0}")]
    InvalidSet(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("non-finite feedback: {0}")]
    Feedback(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{algorithm} is not supported here: {reason}")]
    Unsupported {
        algorithm: &'static str,
        reason: String,
    },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },

    #[error("internal contract violated: {0}")]
    Internal(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("MDP file line {line}: {message}")]
    MdpParse { line: usize, message: String },

    #[error("rate undefined: {0}")]
    RateUndefined(String),
}

impl ColError {
    /// Failures caused by floating-point trouble or solver non-convergence rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            ColError::Numeric(_)
                | ColError::NonConvergence { .. }
                | ColError::Feedback(_)
                | ColError::Internal(_)
                | ColError::RateUndefined(_)
        )
    }
}
