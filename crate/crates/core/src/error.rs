use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("rectangle ({x}, {y}, {w}x{h}) exceeds image bounds {width}x{height}")]
    OutOfBounds {
        x: usize,
        y: usize,
        w: usize,
        h: usize,
        width: usize,
        height: usize,
    },

    #[error("homography is singular (|det| = {0:e})")]
    SingularHomography(f64),

    #[error("empty patch")]
    EmptyPatch,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("training sample too small: need at least {needed} vectors, got {got}")]
    SampleTooSmall { needed: usize, got: usize },

    #[error("index holds no features")]
    EmptyIndex,

    #[error("{what}: bad magic {found:?}")]
    BadMagic { what: &'static str, found: [u8; 4] },

    #[error("{what}: unsupported version {found}")]
    UnsupportedVersion { what: &'static str, found: u32 },

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("fewer than 4 correspondences, no homography")]
    NoHomography,

    #[error("empty feature set")]
    EmptyFeatureSet,

    #[error("relevant set is empty")]
    EmptyRelevant,

    #[error("query node {0} is not active")]
    QueryNotActive(u64),

    #[error("unknown image id {0}")]
    UnknownImage(u64),

    #[error("cannot decode image {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    RawIo(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("ingestion pipeline failed: {0}")]
    Pipeline(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
