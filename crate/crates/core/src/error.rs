use crate::kv::KvError;

/// Errors raised across the crate. Variants follow the failure categories
/// the operations can report.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An input violated a precondition or invariant.
    #[error("validation error: {0}")]
    Validation(String),
    /// A table would exceed its cell budget.
    #[error("size error: {0}")]
    Size(String),
    /// Conditioning on a zero-probability event.
    #[error("conditioning error: {0}")]
    Conditioning(String),
    /// A sequence does not fit the model context.
    #[error("length error: {0}")]
    Length(String),
    /// NaN or infinite value where a finite one is required.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Malformed or mismatched file.
    #[error("format error: {0}")]
    Format(String),
    /// Missing or inconsistent intermediate state.
    #[error("state error: {0}")]
    State(String),
    #[error("index error: {0}")]
    Index(String),
    #[error(transparent)]
    Config(#[from] KvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn validation(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}
