use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed record ({detail})")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    #[error("sentence {sentence}: invalid dependency tree: {detail}")]
    InvalidTree { sentence: usize, detail: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("vocabulary error: {0}")]
    Vocab(String),

    #[error("archive error in {path}: {detail}")]
    Archive { path: PathBuf, detail: String },

    #[error("checksum mismatch in {path}")]
    Checksum { path: PathBuf },

    #[error("config error: {0}")]
    Config(String),

    #[error("cache/config mismatch: {0}")]
    CacheMismatch(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("checkpoint error in {path}: {detail}")]
    Checkpoint { path: PathBuf, detail: String },

    #[error("unknown sentence id {0}")]
    UnknownSentence(usize),

    #[error("{0}")]
    Other(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
