use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] archnet_core::Error),
    #[error(transparent)]
    Protocol(#[from] archnet_protocol::ProtocolError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("serializing {what}: {source}")]
    Json {
        what: &'static str,
        #[source]
        source: serde_json::Error,
    },
    /// The command ran but its postcondition does not hold.
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    /// Process exit code: 2 usage, 3 file system, 4 data or model, 5 protocol, 6 postcondition.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Core(_) | CliError::Json { .. } => 4,
            CliError::Protocol(_) => 5,
            CliError::Failed(_) => 6,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
