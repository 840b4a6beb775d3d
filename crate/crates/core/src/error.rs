use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the segmentation toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape {0:?}: every dimension must be positive")]
    InvalidShape([usize; 3]),

    #[error("invalid spacing {0:?}: every component must be finite and positive")]
    InvalidSpacing([f64; 3]),

    #[error("data length {actual} does not match shape {shape:?} (expected {expected})")]
    DataLength {
        shape: [usize; 3],
        expected: usize,
        actual: usize,
    },

    #[error("volume contains non-finite value at linear index {0}")]
    NonFinite(usize),

    #[error("volume too small for gradient: shape {0:?} (every dimension must be at least 2)")]
    TooSmallForGradient([usize; 3]),

    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch([usize; 3], [usize; 3]),

    #[error("voxel {index:?} outside volume of shape {shape:?}")]
    OutOfBounds { index: [usize; 3], shape: [usize; 3] },

    #[error("inconsistent extreme points: {0}")]
    InconsistentPoints(String),

    #[error("empty ground truth")]
    EmptyGroundTruth,

    #[error("empty supervision: no annotated voxels")]
    EmptySupervision,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("undefined HD95: {0} mask is empty")]
    UndefinedHd95(&'static str),

    #[error("non-finite {what} at iteration {iteration}")]
    NonFiniteTraining { what: &'static str, iteration: usize },

    #[error("phantom generation failed after {0} attempts")]
    PhantomGeneration(usize),

    #[error("payload length mismatch in {path}: expected {expected} bytes, found {actual}")]
    PayloadLength {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },

    #[error("invalid header in {path}: {message}")]
    Header { path: PathBuf, message: String },

    #[error("failed to parse {path} at byte {offset}: {message}")]
    Parse {
        path: PathBuf,
        offset: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
