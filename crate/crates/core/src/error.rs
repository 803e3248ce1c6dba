use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("identity map violates the simplex: {0}")]
    Simplex(String),

    #[error("masks do not partition the grid: {0}")]
    Partition(String),

    #[error("identity map must be categorical: {0}")]
    NotCategorical(String),

    #[error("input of {got} pixels is smaller than the receptive field {rf}")]
    TooSmall { got: usize, rf: usize },

    #[error("training diverged at scale {scale}, iteration {iteration}: {what}")]
    Diverged {
        scale: usize,
        iteration: usize,
        what: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint {path} is corrupt: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("unsupported format version {found} (this build reads version {supported}); re-export the bundle with a matching release")]
    Version { found: u32, supported: u32 },

    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error: {0}")]
    Image(String),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
