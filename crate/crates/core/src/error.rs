use std::path::PathBuf;

use thiserror::Error;

use crate::trace_model::{ValidationError, WireError};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Wire(#[from] WireError),

    #[error(transparent)]
    Validation(#[from] ValidationError),

    #[error("{}: {source}", path.display())]
    TraceFile {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("no trace files found in {}", .0.display())]
    EmptyTraceDir(PathBuf),

    #[error("unknown module path `{0}`")]
    UnknownPath(String),

    #[error("unknown library `{0}`")]
    UnknownLibrary(String),

    #[error("module `{module}` has conflicting file paths `{first}` and `{second}`")]
    ConflictingFile {
        module: String,
        first: String,
        second: String,
    },

    #[error("manifest mismatch: `{expected}` vs `{found}`; traces from different code versions cannot be mixed")]
    ManifestMismatch { expected: String, found: String },

    #[error("no samples available to compute utilization")]
    NoSamples,

    #[error("insufficient samples: {have} EXEC samples, min_samples is {need}")]
    InsufficientSamples { have: u64, need: u64 },

    #[error("degenerate trace set: mean execution time is zero")]
    ZeroExecution,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),
}
