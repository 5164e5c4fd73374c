//! Error taxonomy shared across the engine.
//!
//! The split matters operationally: `Transport` failures are retryable,
//! `Protocol` failures are not, and verifier-level code degrades to
//! neutral scores instead of aborting a run.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Input violated a documented precondition or invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// Network-level failure (timeout, connection refused, 5xx). Retryable.
    #[error("transport error{}: {message}", if *.retryable { " (retryable)" } else { "" })]
    Transport { message: String, retryable: bool },

    /// The remote peer answered, but not in the agreed wire format. Not retryable.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// The generation backend refused or failed to produce frames.
    #[error("generation error: {0}")]
    Generation(String),

    /// The backend does not implement the requested capability.
    #[error("capability error: {0}")]
    Capability(String),

    /// Token alignment for teacher forcing could not be established.
    #[error("alignment error: {0}")]
    Alignment(String),

    /// A run configuration could not be parsed or failed validation.
    #[error("config error: {0}")]
    Config(String),

    /// An image ref was not resolvable in the content store.
    #[error("image ref not found in store: {0}")]
    MissingImage(String),

    /// A transcript replay had no recorded response for a request.
    #[error("replay error: {0}")]
    Replay(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn protocol(msg: impl Into<String>) -> Self {
        Error::Protocol(msg.into())
    }

    pub fn transport(msg: impl Into<String>, retryable: bool) -> Self {
        Error::Transport {
            message: msg.into(),
            retryable,
        }
    }

    /// True when a retry has a chance of succeeding.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Transport { retryable: true, .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
