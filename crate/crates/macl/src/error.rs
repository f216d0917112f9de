//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MaclError {
    #[error("statistics error: {0}")]
    Statistics(String),

    #[error("vocabulary error: {0}")]
    Vocabulary(String),

    #[error("batch error: {0}")]
    Batch(String),

    #[error("gradient error: {0}")]
    Gradient(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl MaclError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        MaclError::Io {
            path: path.into(),
            source,
        }
    }
}
