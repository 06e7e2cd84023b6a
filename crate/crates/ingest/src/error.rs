use std::path::PathBuf;

use thiserror::Error;

use crate::document::ProtocolError;

pub type Result<T, E = IngestError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("document stream: {0}")]
    Protocol(#[from] ProtocolError),

    #[error("{0}")]
    Core(#[from] sentinel_core::Error),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("artifact checksum mismatch: recorded {recorded}, computed {computed}")]
    Checksum { recorded: String, computed: String },

    #[error("artifact schema version `{found}` is not supported (this build reads `{supported}`); re-export the model with a matching version")]
    Migration { found: String, supported: String },

    #[error("artifact holds a `{found}` model, expected `{expected}`")]
    WrongKind { expected: String, found: String },

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl IngestError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IngestError::Io { path: path.into(), source }
    }
}
