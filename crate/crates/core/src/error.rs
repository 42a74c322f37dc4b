use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("not a rotation matrix: max |MᵀM - I| = {orthogonality:.3e}, det = {det:.9}")]
    InvalidRotation { orthogonality: f64, det: f64 },

    #[error("degenerate 6D representation: {0}")]
    DegenerateSixD(&'static str),

    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("invalid raster: {0}")]
    InvalidRaster(String),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("size mismatch: expected {expected}, got {got}")]
    SizeMismatch { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("record {index}: {reason}")]
    InvalidRecord { index: usize, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the filesystem rather than by the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
