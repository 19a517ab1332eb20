use std::io;

use inpaint_core::Error as CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
    #[error("numeric failure: {0}")]
    NonFinite(String),
    #[error("{0}")]
    Core(CoreError),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::NonFinite(_) => 4,
            CliError::Core(e) => match e {
                CoreError::Io(_) | CoreError::Image(_) | CoreError::Checkpoint(_) => 3,
                CoreError::NonFinite(_) => 4,
                _ => 1,
            },
            CliError::Other(_) => 1,
        }
    }

    pub fn io(context: impl Into<String>, source: io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::NonFinite(m) => CliError::NonFinite(m),
            other => CliError::Core(other),
        }
    }
}
