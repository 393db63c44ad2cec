use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the forecaster library.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or hyperparameter.
    #[error("config error: {0}")]
    Config(String),

    /// Array shapes disagree with what an operation expects.
    #[error("dimension mismatch in {context}: expected {expected}, got {found}")]
    Dimension {
        context: &'static str,
        expected: String,
        found: String,
    },

    /// A CSV cell could not be parsed.
    #[error("parse error at line {line}, column {column:?}: {message}")]
    Parse {
        line: u64,
        column: String,
        message: String,
    },

    #[error("dataset `{0}` is empty")]
    EmptyDataset(String),

    /// Any other data problem (too short, missing metadata, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("training error: {0}")]
    Training(String),

    /// Corrupt, truncated or tampered file.
    #[error("integrity error at byte offset {offset}: {message}")]
    Integrity { offset: u64, message: String },

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::Dimension {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map(|p| p.line()).unwrap_or(0);
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Parse {
                line,
                column: String::new(),
                message: format!("{other:?}"),
            },
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Data(format!("json: {e}"))
    }
}
