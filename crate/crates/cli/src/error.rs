use thiserror::Error;

use sentinel_ingest::IngestError;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Data(String),

    #[error("{0}")]
    Threshold(String),

    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Threshold(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }

    /// Input that could not be read or made sense of.
    pub fn data(context: impl std::fmt::Display, e: impl std::fmt::Display) -> Self {
        CliError::Data(format!("{context}: {e}"))
    }

    pub fn runtime(context: impl std::fmt::Display, e: impl std::fmt::Display) -> Self {
        CliError::Runtime(format!("{context}: {e}"))
    }
}

impl From<sentinel_core::Error> for CliError {
    fn from(e: sentinel_core::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Config(m) => CliError::Usage(m),
            IngestError::Io { .. } => CliError::Runtime(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}
