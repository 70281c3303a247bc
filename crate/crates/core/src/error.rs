//! Error type shared across the library.
//!
//! Recoverable conditions (bad files, numeric domain violations, divergence)
//! are reported as [`Error`] values. Shape mismatches and other violations of
//! internal API contracts panic: they indicate programming errors, not bad
//! input.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("dataset is empty after ingestion filtering")]
    EmptyDataset,

    #[error("no inter-arrival times: every sequence has fewer than 2 events")]
    NoInterArrivals,

    #[error("unknown mark {0:?}")]
    UnknownMark(String),

    #[error("numeric domain: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch} (non-finite objective)")]
    Diverged { epoch: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
