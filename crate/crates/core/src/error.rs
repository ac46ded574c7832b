use std::path::PathBuf;

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by the feature pipeline, models and storage layers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("corrupt audio: {0}")]
    CorruptAudio(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("wrong network head: {0}")]
    WrongHead(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("corrupt store: {0}")]
    CorruptStore(String),

    #[error("unknown class: {0}")]
    UnknownClass(String),

    #[error("class too small: {0}")]
    ClassTooSmall(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
