use thiserror::Error;

use crate::vocab::TokenId;

/// Errors raised by the training stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("token {token} is out of range for a vocabulary of size {size}")]
    TokenOutOfRange { token: TokenId, size: usize },

    #[error("sequence must contain at least one token")]
    EmptySequence,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Exact mode (eps_std = 0) hit a group whose rewards have zero spread.
    #[error("group rewards have zero standard deviation and eps_std = 0")]
    DegenerateGroup,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed policy file at line {line}: {msg}")]
    PolicyFormat { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
