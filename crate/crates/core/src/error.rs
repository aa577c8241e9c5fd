//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or batch shape does not match what an operation expects.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A value is outside an operation's domain (labels out of range,
    /// quantizer inputs outside [0,1], empty datasets, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A forward trace does not belong to the model (or model params
    /// changed since the trace was produced).
    #[error("trace error: {0}")]
    Trace(String),

    /// Unknown model id or missing checkpoint in a roster.
    #[error("roster error: {0}")]
    Roster(String),

    /// Training diverged; names the epoch where loss became non-finite.
    #[error("training diverged at epoch {epoch}: {detail}")]
    Training { epoch: usize, detail: String },

    /// Fewer jointly-correct samples than requested.
    #[error("selection error: requested {requested} samples but only {available} are classified correctly by both models")]
    Selection { requested: usize, available: usize },

    /// Malformed on-disk data; carries the byte offset where parsing failed.
    #[error("format error at byte {offset}: {detail}")]
    Format { offset: u64, detail: String },

    /// Invalid configuration (CLI flags, config files, attack params).
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 for configuration problems,
    /// 3 for data/format problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Roster(_) => 2,
            Error::Format { .. } | Error::Io(_) => 3,
            _ => 1,
        }
    }
}
