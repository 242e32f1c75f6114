use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("directory not found: {0}")]
    MissingDirectory(PathBuf),

    #[error("no files matching `{pattern}` in {dir}")]
    NoMatchingFiles { dir: PathBuf, pattern: String },

    #[error("frame {index} is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    FrameSizeMismatch {
        index: usize,
        want_w: usize,
        want_h: usize,
        got_w: usize,
        got_h: usize,
    },

    #[error("malformed image {path}: {reason}")]
    BadImage { path: PathBuf, reason: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("model format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
