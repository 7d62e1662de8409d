use std::path::PathBuf;

/// Errors raised across the fusion toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot decode {path}: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("batch-norm running statistics are uninitialized ({0})")]
    UninitializedBatchNorm(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error("bad config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the filesystem or undecodable files.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io { .. } | Error::Decode { .. } | Error::UnsupportedFormat(_) | Error::Checkpoint(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

macro_rules! ensure_shape {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::ShapeMismatch(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure_shape;
