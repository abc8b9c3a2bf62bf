use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("png: {0}")]
    PngDecode(#[from] png::DecodingError),
    #[error("png: {0}")]
    PngEncode(#[from] png::EncodingError),
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error("unsupported {what}: {detail}")]
    Unsupported { what: &'static str, detail: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("npy: {0}")]
    Npy(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("setting `{key}`: {message}")]
    Setting { key: String, message: String },
    #[error(transparent)]
    Core(#[from] sobolev_core::Error),
}

impl FormatError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FormatError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = FormatError> = std::result::Result<T, E>;
