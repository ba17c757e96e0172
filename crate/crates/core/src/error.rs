use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("illegal ternary code {0:#04b}")]
    IllegalCode(u8),

    #[error("scheduling error: {0}")]
    Scheduling(String),

    #[error("capacity exceeded: {what} (capacity {capacity})")]
    Capacity { what: String, capacity: usize },

    /// Internal accounting or ordering bug. Never recoverable.
    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn invariant(msg: impl Into<String>) -> Self {
        Error::Invariant(msg.into())
    }

    /// True for errors that indicate a bug in the simulator rather than bad input.
    pub fn is_internal(&self) -> bool {
        matches!(self, Error::Invariant(_))
    }
}
