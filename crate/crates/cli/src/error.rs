use std::path::Path;

use mcle_core::data::DataError;
use mcle_core::engine::EngineError;
use mcle_core::eval::EvalError;
use mcle_core::svm::SvmError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags or flag combinations; exit 2.
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Svm(#[from] SvmError),
    #[error(transparent)]
    Store(#[from] mcle_service::StoreError),
    #[error(transparent)]
    Client(#[from] mcle_client::ClientError),
    #[error("{what}: {source}")]
    Io { what: String, source: std::io::Error },
    #[error("{what}: {source}")]
    Json { what: String, source: serde_json::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    pub fn io(what: impl AsRef<Path>, source: std::io::Error) -> CliError {
        CliError::Io {
            what: what.as_ref().display().to_string(),
            source,
        }
    }

    pub fn json(what: impl AsRef<Path>, source: serde_json::Error) -> CliError {
        CliError::Json {
            what: what.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
