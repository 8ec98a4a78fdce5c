use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    ConfigFields(Vec<String>),

    #[error("non-finite value produced by {op}")]
    NonFinite { op: String },

    #[error("input too short: {what} needs at least {min} samples, got {got}")]
    TooShort { what: &'static str, min: usize, got: usize },

    #[error("{0}")]
    Unsupported(String),

    #[error("wav: {0}")]
    Wav(String),

    #[error("manifest line {line}: {detail}")]
    Manifest { line: usize, detail: String },

    #[error("checkpoint: bad magic (not an ISCT checkpoint)")]
    BadMagic,

    #[error("checkpoint: format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint: checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    Checksum { stored: u32, computed: u32 },

    #[error("checkpoint: tensor `{path}` has shape {found:?}, model expects {expected:?}")]
    TensorShape { path: String, found: Vec<usize>, expected: Vec<usize> },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("data: {0}")]
    Data(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::ConfigFields(_) | Error::Unsupported(_) => 1,
            Error::NonFinite { .. } => 3,
            Error::Shape { .. } => 3,
            _ => 2,
        }
    }
}
