use std::path::Path;

use dragstream_core::drag::DragError;
use dragstream_core::metrics::MetricError;
use dragstream_core::model::ModelError;
use dragstream_core::optim::OptimError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("session is busy optimising")]
    Busy,
    #[error("session is {0:?}")]
    Status(crate::session::Status),
    #[error("frame {frame} is no longer editable (live window starts at {oldest})")]
    StaleFrame { frame: usize, oldest: usize },
    #[error("animation must start at the latest frame {latest:?}, got {frame}")]
    NotLatest { frame: usize, latest: Option<usize> },
    #[error("unknown fixture `{0}`")]
    UnknownFixture(String),
    #[error("archive check failed: {0}")]
    Archive(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed message: {0}")]
    Protocol(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Drag(#[from] DragError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

impl EngineError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        EngineError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Stable machine-readable tag for the wire API.
    pub fn kind(&self) -> ErrorKind {
        match self {
            EngineError::Config(_) | EngineError::Model(ModelError::Config { .. }) | EngineError::Optim(OptimError::Config { .. }) => ErrorKind::Config,
            EngineError::UnknownSession(_) | EngineError::UnknownFixture(_) => ErrorKind::NotFound,
            EngineError::Busy => ErrorKind::Busy,
            EngineError::Status(_) => ErrorKind::Status,
            EngineError::StaleFrame { .. } | EngineError::NotLatest { .. } => ErrorKind::StaleFrame,
            EngineError::Drag(_) => ErrorKind::Instruction,
            EngineError::Archive(_) | EngineError::Io { .. } => ErrorKind::Io,
            EngineError::Protocol(_) => ErrorKind::Protocol,
            EngineError::Model(_) | EngineError::Optim(_) | EngineError::Metric(_) => ErrorKind::Internal,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Config,
    NotFound,
    Busy,
    Status,
    StaleFrame,
    Instruction,
    Io,
    Protocol,
    Internal,
}

pub type Result<T> = std::result::Result<T, EngineError>;
