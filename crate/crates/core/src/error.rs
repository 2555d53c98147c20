use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    /// Array or model dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// A hyperparameter or numeric argument is outside its valid range.
    #[error("invalid parameter: {0}")]
    Parameter(String),
    /// Input data violates a precondition (empty set, bad label, non-finite value).
    #[error("invalid input: {0}")]
    Input(String),
    /// A configuration document is inconsistent.
    #[error("configuration error: {0}")]
    Config(String),
    /// A computation produced a non-finite value.
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// A text file could not be parsed.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}

pub(crate) fn param(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}

pub(crate) fn input(msg: impl Into<String>) -> Error {
    Error::Input(msg.into())
}
