use thiserror::Error;

/// Errors produced by the numerical routines of this crate.
#[derive(Debug, Error)]
pub enum SscmError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{context} did not converge after {iterations} iterations (residual {residual:e})")]
    ConvergenceFailure {
        context: &'static str,
        iterations: usize,
        residual: f64,
        /// Last iterate, when the routine has a meaningful vector state.
        last_iterate: Option<Vec<f64>>,
    },

    #[error("unsupported configuration: {0}")]
    UnsupportedConfiguration(String),

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl SscmError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        SscmError::InvalidArgument(msg.into())
    }

    pub(crate) fn unsupported(msg: impl Into<String>) -> Self {
        SscmError::UnsupportedConfiguration(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        SscmError::NumericFailure(msg.into())
    }

    /// True for failures of an iterative or numerical procedure, as opposed to
    /// bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            SscmError::ConvergenceFailure { .. } | SscmError::NumericFailure(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, SscmError>;
