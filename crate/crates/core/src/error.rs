use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value produced by `{op}`")]
    NonFinite { op: String },

    #[error("tape error: {0}")]
    Tape(String),

    #[error("volume has zero intensity variance")]
    ZeroVariance,

    #[error("empty surface: the mask has no foreground voxels")]
    EmptySurface,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("unsupported data type code {0}")]
    UnsupportedDtype(i32),

    #[error("unsupported variant: {0}")]
    UnsupportedVariant(String),

    #[error("truncated file: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error("compressed files are not supported")]
    Compressed,

    #[error("configuration hash mismatch: checkpoint was written for a different model configuration")]
    ConfigMismatch,

    #[error("malformed file: {0}")]
    Malformed(String),
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn with_path(self, path: impl Into<PathBuf>) -> Self {
        Error::File {
            path: path.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, with any file context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::File { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Io(_)
            | Error::BadMagic { .. }
            | Error::UnsupportedVersion(_)
            | Error::UnsupportedDtype(_)
            | Error::UnsupportedVariant(_)
            | Error::Truncated { .. }
            | Error::Compressed
            | Error::Malformed(_) => 2,
            Error::NonFinite { .. } => 4,
            _ => 3,
        }
    }
}
