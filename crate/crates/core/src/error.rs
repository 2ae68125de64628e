use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration field holds an unusable value.
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("class {class} has {available} samples, {requested} requested")]
    InsufficientSamples {
        class: usize,
        requested: usize,
        available: usize,
    },

    #[error("cell (class {class}, cluster {cluster}) is empty")]
    EmptyCell { class: usize, cluster: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Training produced a non-finite loss or penalty.
    #[error("training diverged at epoch {epoch}: {what}")]
    Diverged { epoch: usize, what: String },

    /// The artifact belongs to a different protocol or split role than requested.
    #[error("protocol guard: {0}")]
    Protocol(String),

    #[error("malformed {kind} file: {reason}")]
    Format { kind: &'static str, reason: String },

    #[error("manifest digest mismatch for {0}")]
    Tampered(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn format(kind: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            kind,
            reason: reason.into(),
        }
    }
}
