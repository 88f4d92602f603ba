use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("manifest line {line}: {message}")]
    ManifestParse { line: u64, message: String },

    #[error("duplicate sample id `{0}` in manifest")]
    DuplicateId(String),

    #[error("unknown sample id `{0}`")]
    UnknownId(String),

    #[error("sample `{id}`: mask is {mask_width}x{mask_height} but image is {width}x{height}")]
    MaskDimensionMismatch {
        id: String,
        width: usize,
        height: usize,
        mask_width: usize,
        mask_height: usize,
    },

    #[error("stratum `{label}` has {count} sample(s); at least 2 are needed to split")]
    StratumTooSmall { label: String, count: usize },

    #[error("unknown preprocessing step `{0}`")]
    UnknownStep(String),

    #[error("failed to decode `{path}`: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("backward called before a training-mode forward pass")]
    NoForwardCache,

    #[error("empty input: {0}")]
    Empty(String),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}
