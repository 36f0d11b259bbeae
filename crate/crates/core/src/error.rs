use thiserror::Error;

/// Errors surfaced by every lab operation.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// A divergence threshold could not be met inside the configured support horizon.
    #[error("divergence horizon exhausted: {0}")]
    DivergenceHorizon(String),
    #[error("resource budget exceeded: {0}")]
    Resource(String),
    /// Raised when a guarantee that should hold by construction fails.
    #[error("internal error: {0}")]
    Internal(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = LabError> = std::result::Result<T, E>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(LabError::InvalidArgument(msg.into()))
}
