use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{0}")]
    Manifest(String),
    #[error("unknown class {0:?}")]
    UnknownClass(String),
    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: String, found: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("detector failure: {0}")]
    Detector(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFinite { iteration: u64, detail: String },
    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: impl ToString, found: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
