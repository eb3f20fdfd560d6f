use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("point is behind the camera (camera-frame z = {z})")]
    BehindCamera { z: f64 },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: parse error at byte {offset}: {message}", path.display())]
    Parse {
        path: PathBuf,
        offset: usize,
        message: String,
    },

    #[error("{}: unsupported format: {message}", path.display())]
    UnsupportedFormat { path: PathBuf, message: String },

    #[error("non-finite gradient for `{param}` at index {index} (value {value}); aborting")]
    NonFinite {
        param: String,
        index: usize,
        value: f64,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn parse(offset: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: PathBuf::new(),
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Attaches a file path to format errors produced by in-memory decoders.
    pub fn with_path(self, p: &Path) -> Self {
        match self {
            Error::Parse {
                offset, message, ..
            } => Error::Parse {
                path: p.to_path_buf(),
                offset,
                message,
            },
            Error::UnsupportedFormat { message, .. } => Error::UnsupportedFormat {
                path: p.to_path_buf(),
                message,
            },
            other => other,
        }
    }

    /// True for errors caused by bad data on disk or in a request, as opposed
    /// to bad arguments.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. } | Error::Parse { .. } | Error::UnsupportedFormat { .. }
        )
    }
}
