use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GatewayError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("request timed out")]
    Timeout,
    #[error("provider rejected the request{}: {message}", status.map(|s| format!(" ({s})")).unwrap_or_default())]
    Rejected { status: Option<u16>, message: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("embedding dimension {actual} does not match the configured {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("unknown finetune job `{0}`")]
    UnknownJob(String),
    #[error("only {succeeded} of {requested} samples succeeded; first failure: {first_error}")]
    Incomplete {
        requested: usize,
        succeeded: usize,
        first_error: Box<GatewayError>,
    },
    #[error("configuration: {0}")]
    Config(String),
}

impl GatewayError {
    /// Transport failures and timeouts are worth another attempt; everything
    /// else will fail the same way again.
    pub fn is_retryable(&self) -> bool {
        matches!(self, GatewayError::Transport(_) | GatewayError::Timeout)
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        GatewayError::InvalidRequest(msg.into())
    }
}

pub type Result<T, E = GatewayError> = std::result::Result<T, E>;
