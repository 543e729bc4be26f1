use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("transmission sum {sum} exceeds 1 at pixel ({row}, {col})")]
    TransmissionRangeViolation { row: usize, col: usize, sum: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("channel count {channels} is not divisible by {groups} groups")]
    IndivisibleChannels { channels: usize, groups: usize },
    #[error("pyramid level {level} exceeds feature map size {size}")]
    LevelTooLarge { level: usize, size: usize },
    #[error("non-finite activation in {0}")]
    NonFiniteActivation(String),
    #[error("unknown architecture `{0}`")]
    UnknownArch(String),
    #[error("architecture mismatch: expected `{expected}`, found `{found}`")]
    ArchMismatch { expected: String, found: String },
    #[error("image has no rain pixels")]
    NoRainPixels,
    #[error("no usable samples: {0}")]
    NoUsableSamples(String),
    #[error("non-finite loss at {stage} epoch {epoch}")]
    NonFiniteLoss { stage: String, epoch: usize },
    #[error("image of {height}x{width} is too small (need at least {min})")]
    TooSmall { height: usize, width: usize, min: usize },
    #[error("name mismatch: {0}")]
    NameMismatch(String),
    #[error("no readable images in {0}")]
    EmptyCorpus(PathBuf),
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint format: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Decode { path: PathBuf, msg: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for failures caused by the filesystem or unreadable files.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Decode { .. } | Error::EmptyCorpus(_))
    }

    /// True for numerical breakdown during training or inference.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFiniteLoss { .. } | Error::NonFiniteActivation(_))
    }
}
