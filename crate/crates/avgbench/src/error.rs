use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Malformed arguments: wrong dimensions, invalid probabilities, non-unitary gates.
    #[error("invalid input: {0}")]
    Input(String),

    /// The request is well formed but its physical preconditions do not hold.
    #[error("precondition failed: {0}")]
    Precondition(String),

    /// Problem size beyond a documented resource cap.
    #[error("resource limit: {0}")]
    Resource(String),

    /// Requested feature outside the supported envelope.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// The optimizer stopped without a certified answer.
    #[error("solver failure: {0}")]
    Solver(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}

pub(crate) fn precondition<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Precondition(msg.into()))
}
