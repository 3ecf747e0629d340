use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used to pick a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Config,
    Data,
    Model,
    Runtime,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Model => 4,
            ErrorKind::Runtime => 5,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("not found: {}", .0.display())]
    NotFound(PathBuf),

    #[error("malformed manifest: {0}")]
    MalformedManifest(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("no image of object `{object}` under condition {condition}")]
    Coverage { object: String, condition: String },

    #[error("malformed input: {0}")]
    MalformedInput(String),

    #[error("tap `{tap}` not found; available taps: {}", .available.join(", "))]
    TapNotFound { tap: String, available: Vec<String> },

    #[error("model error: {0}")]
    Model(String),

    #[error("inference failed on record `{record}`: {message}")]
    Inference { record: String, message: String },

    #[error("non-finite feature value in row {row} (record `{record}`)")]
    NonFinite { row: usize, record: String },

    #[error("stale feature cache {}: expected provenance {expected}, found {found}", .path.display())]
    StaleCache {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("corrupt feature cache: {0}")]
    CacheFormat(String),

    #[error("invalid k={k} for {n} samples")]
    InvalidK { k: usize, n: usize },

    #[error("affinity propagation did not converge: {0}")]
    NonConvergence(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("i/o error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {}: {source}", .path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            Config(_) | InvalidK { .. } | Json { .. } => ErrorKind::Config,
            NotFound(_)
            | MalformedManifest(_)
            | EmptyDataset(_)
            | Coverage { .. }
            | MalformedInput(_)
            | StaleCache { .. }
            | CacheFormat(_)
            | Shape(_) => ErrorKind::Data,
            TapNotFound { .. } | Model(_) => ErrorKind::Model,
            Inference { .. }
            | NonFinite { .. }
            | NonConvergence(_)
            | DegenerateInput(_)
            | Io { .. } => ErrorKind::Runtime,
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind().exit_code()
    }
}
