use std::path::PathBuf;

use manifold_gcnn::GcnnError;
use thiserror::Error;

use crate::stage::Stage;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage { stage: Stage, source: GcnnError },
    #[error("i/o error on {path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl LabError {
    pub fn config(field: &str, message: impl Into<String>) -> Self {
        Self::Config { field: field.to_string(), message: message.into() }
    }

    pub fn io(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        Self::Io { path: path.into(), message: err.to_string() }
    }

    /// 2 for usage and configuration errors, 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } | Self::Parse(_) => 2,
            Self::Stage { .. } | Self::Io { .. } => 1,
        }
    }
}

pub type LabResult<T> = std::result::Result<T, LabError>;
