use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("dataset layout: expected `{expected}` under {root}")]
    MissingLayout { root: PathBuf, expected: String },

    #[error("no entries in split `{split}` of {dataset}")]
    NoEntries { dataset: String, split: String },

    #[error("no retina content: every pixel is below the brightness threshold")]
    NoRetinaContent,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint incompatible with model: {0}")]
    Incompatible(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("AP undefined: no positive labels")]
    ApUndefined,

    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    #[error("non-finite loss {value} at epoch {epoch}, step {step}")]
    NonFiniteLoss { value: f64, epoch: usize, step: usize },

    #[error("model has no screening head")]
    NoScreeningHead,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }
}
