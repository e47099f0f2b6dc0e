use thiserror::Error;

/// Errors raised by the cognition pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CognitionError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training did not converge after {iterations} iterations (residual gap {residual_gap:.3e})")]
    TrainingFailed { iterations: usize, residual_gap: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CognitionError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        CognitionError::InvalidArgument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, CognitionError>;
