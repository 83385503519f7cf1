use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum CdsaError {
    /// A caller-supplied argument violates an operation's precondition.
    #[error("invalid argument: {0}")]
    Argument(String),
    /// Malformed file contents.
    #[error("parse error at byte offset {offset}: {message}")]
    Parse { offset: usize, message: String },
    /// Data failed a validation check (non-finite values, out-of-range inputs).
    #[error("validation error: {0}")]
    Validation(String),
    #[error("no background present: distance transform needs at least one false pixel")]
    NoBackground,
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CdsaError {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        CdsaError::Argument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, CdsaError>;
