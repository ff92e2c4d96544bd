use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("parameter vector has length {got}, architecture expects {expected}")]
    ParamLength { expected: usize, got: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("operation requires a linear network (identity activation, no bias)")]
    NotLinear,

    #[error("softmax cross-entropy needs at least two outputs")]
    CrossEntropySingleOutput,

    #[error("hessian of size {size}x{size} exceeds the cap of {cap}")]
    HessianTooLarge { size: usize, cap: usize },

    #[error("design matrix is rank deficient (smallest/largest singular value = {ratio:e})")]
    RankDeficient { ratio: f64 },

    #[error("non-filling architecture requires whitened data (XX^T = cI), deviation {deviation:e}")]
    WhiteningRequired { deviation: f64 },

    #[error("eigensolver failed: {0}")]
    Eigen(String),

    #[error("power iteration stagnated after {iterations} iterations (residual {residual:e})")]
    PowerIterationStagnated { iterations: usize, residual: f64 },

    #[error("could not construct a minimum within tolerance after {attempts} attempts")]
    MinimumSampling { attempts: usize },

    #[error("invalid configuration at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("idx file {path}: bad magic number {found:#010x}, expected {expected:#010x}")]
    IdxBadMagic { path: PathBuf, found: u32, expected: u32 },

    #[error("idx file {path}: truncated ({needed} bytes needed, {available} available)")]
    IdxTruncated { path: PathBuf, needed: usize, available: usize },

    #[error("idx files disagree: {images} images but {labels} labels")]
    IdxCountMismatch { images: usize, labels: usize },

    #[error("label filter kept no samples")]
    EmptyFilter,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { path: path.into(), message: message.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
