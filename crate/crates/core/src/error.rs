use thiserror::Error;

/// Errors raised by the simulator and analysis pipeline.
#[derive(Debug, Error)]
pub enum QpaError {
    /// An argument violated an operation's precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// An iterative or numerical procedure failed.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Invalid or unreadable experiment configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl QpaError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        QpaError::Domain(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        QpaError::Numerical(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, QpaError>;
