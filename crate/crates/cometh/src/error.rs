//! Error classes shared by every command, each mapped to a process exit code.

use std::path::PathBuf;

use thiserror::Error;

use crate::gateway::GatewayError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("stage `{stage}` needs {path}, which does not exist; run `{stage}` first")]
    MissingStageArtifact { stage: &'static str, path: PathBuf },
    #[error("remote backend error: {0}")]
    Remote(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::MissingStageArtifact { .. } => 3,
            Error::Remote(_) => 4,
            Error::Internal(_) | Error::Io { .. } => 5,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn data(e: impl std::fmt::Display) -> Self {
        Error::Data(e.to_string())
    }

    pub fn internal(e: impl std::fmt::Display) -> Self {
        Error::Internal(e.to_string())
    }
}

impl From<GatewayError> for Error {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::Config(msg) => Error::Config(msg),
            GatewayError::InvalidInput(msg) => Error::Data(msg),
            GatewayError::Cache { .. } => Error::Internal(e.to_string()),
            other => Error::Remote(other.to_string()),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
