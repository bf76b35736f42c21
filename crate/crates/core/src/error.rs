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

    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("invalid bounding box: {0}")]
    InvalidBox(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("attention context is empty")]
    EmptyContext,

    #[error("scene has no objects")]
    EmptyScene,

    #[error("out of vocabulary: {0}")]
    OutOfVocabulary(String),

    #[error("cosine similarity undefined for a zero vector")]
    ZeroVector,

    #[error("recall undefined: ground truth has no edges")]
    EmptyGroundTruth,

    #[error("non-finite values in {tensor}")]
    NonFinite { tensor: String },

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable per-category process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 2,
            Error::Parse { .. } | Error::Format { .. } => 3,
            Error::InvalidArgument(_) | Error::Config(_) => 4,
            Error::InvalidBox(_)
            | Error::Shape(_)
            | Error::EmptyContext
            | Error::EmptyScene
            | Error::EmptyGroundTruth => 5,
            Error::OutOfVocabulary(_) | Error::ZeroVector => 6,
            Error::NonFinite { .. } | Error::Diverged { .. } => 7,
        }
    }
}
