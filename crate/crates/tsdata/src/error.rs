use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TsError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("inconsistent dataset structure: {0}")]
    Structure(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("manifest serialization failed: {0}")]
    Json(#[from] serde_json::Error),
}

impl TsError {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Self::Parse {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn contract(message: impl Into<String>) -> Self {
        Self::Contract(message.into())
    }
}
