use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to decode {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("failed to encode {path}: {message}")]
    Encode { path: PathBuf, message: String },

    #[error("unsupported pixel format in {path}: {format}")]
    UnsupportedFormat { path: PathBuf, format: String },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("malformed annotation file {path}: {message}")]
    MalformedAnnotations { path: PathBuf, message: String },

    #[error("annotation integrity: {0}")]
    Integrity(String),

    #[error("dimension mismatch for image {image_id}: record is {record_width}x{record_height}, annotations say {width}x{height}")]
    DimensionMismatch {
        image_id: u64,
        record_width: u32,
        record_height: u32,
        width: u32,
        height: u32,
    },

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
