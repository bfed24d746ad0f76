use thiserror::Error;

use crate::lsq::LsqError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Input that carries no usable signal (all zero, empty, flat).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Parameter that violates an operation's precondition.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Data that violates a type invariant.
    #[error("invalid data: {0}")]
    Invalid(String),

    #[error("least-squares fit failed: {0}")]
    Fit(#[from] LsqError),
}

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Invalid(msg.into()))
}
