use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = AnnotateError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    State(String),
    #[error("{0}")]
    Unauthorized(String),
    #[error("session limit of {cap} annotations reached; start a new session with POST /api/sessions?annotator=ID")]
    SessionCap { cap: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt event log {path} line {line}: {message}")]
    Log { path: PathBuf, line: usize, message: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl AnnotateError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AnnotateError::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable code used in HTTP error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            AnnotateError::Validation(_) => "validation",
            AnnotateError::NotFound(_) => "not_found",
            AnnotateError::State(_) => "invalid_state",
            AnnotateError::Unauthorized(_) => "unauthorized",
            AnnotateError::SessionCap { .. } => "session_cap",
            AnnotateError::Io { .. } | AnnotateError::Log { .. } | AnnotateError::Json(_) => "internal",
        }
    }
}
