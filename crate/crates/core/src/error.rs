use thiserror::Error;

/// Errors raised by the tree, measure and simulation routines.
#[derive(Error, Debug)]
pub enum Error {
    /// Malformed input: bad node ids, invalid points, mismatched sizes.
    #[error("invalid input: {0}")]
    Input(String),
    /// Input is well formed but outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// An exact evaluation was requested where only Monte-Carlo is possible.
    #[error("evaluation mode error: {0}")]
    Mode(String),
    #[error("json error")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
