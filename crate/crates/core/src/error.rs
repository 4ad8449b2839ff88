use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unreadable file {path}: {reason}")]
    UnreadableFile { path: PathBuf, reason: String },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("zero-dimension image")]
    EmptyImage,

    #[error("image too small: {width}x{height}, need at least {min}x{min}")]
    ImageTooSmall { width: usize, height: usize, min: usize },

    #[error("invalid threshold block size {0}: must be odd and >= 3")]
    InvalidBlockSize(usize),

    #[error("contour needs at least 3 points, got {0}")]
    TooFewPoints(usize),

    #[error("degenerate polygon (|m00| = {0:e})")]
    DegeneratePolygon(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("information matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("detection failure: found {found} blobs, expected {expected}")]
    DetectionFailure { found: usize, expected: usize },

    #[error("grid ordering is ambiguous: {0}")]
    GridAmbiguity(String),

    #[error("point behind the camera (depth {0})")]
    NonPositiveDepth(f64),

    #[error("degenerate projection: {0}")]
    DegenerateProjection(String),

    #[error("insufficient views: need {needed}, got {got}")]
    InsufficientViews { needed: usize, got: usize },

    #[error("singular constraint system: {0}")]
    SingularSystem(String),

    #[error("optimizer did not converge after {0} iterations")]
    NonConvergence(usize),

    #[error("distortion is not monotonic over the observed field of view")]
    NonMonotonicDistortion,

    #[error("singular information matrix: parameters are unobservable")]
    SingularInformation,

    #[error("circle {0} projects outside the image")]
    OutOfFrame(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
