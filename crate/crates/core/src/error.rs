//! Crate-wide error type.

use std::path::PathBuf;

/// Errors raised by the topology optimizer and its tooling.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shapes or indices disagree.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A non-finite value appeared in a computation.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Invalid configuration value.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data failed validation.
    #[error("validation error: {0}")]
    Validation(String),

    /// The group produced no active edge, so there is nothing to update.
    #[error("no-update batch: no edge was active in any sampled topology")]
    NoUpdate,

    /// HTTP or connection failure talking to an agent endpoint.
    #[error("transport error (retriable={retriable}): {message}")]
    Transport { message: String, retriable: bool },

    /// The external executor ran without a grader; the transcript is attached.
    #[error("dry run: no grader supplied ({} messages dispatched)", transcript.len())]
    DryRun {
        transcript: Vec<crate::env::executor::DispatchedMessage>,
    },

    /// Checkpoint could not be restored.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
