use std::path::PathBuf;

use thiserror::Error;

/// Errors produced across the registration, dataset and evaluation layers.
#[derive(Error, Debug)]
pub enum Error {
    #[error("rotation block is singular or reflecting")]
    DegenerateRotation,

    #[error("focal lengths must be positive (fx = {fx}, fy = {fy})")]
    BadIntrinsics { fx: f64, fy: f64 },

    #[error("no valid correspondences found")]
    NoCorrespondences,

    #[error("histogram holds no samples")]
    EmptyHistogram,

    #[error("median filter rejected every pair")]
    AllPairsRejected,

    #[error("linear system is degenerate (all singular values below cutoff)")]
    DegenerateSystem,

    #[error("malformed sequence at {path}: {reason}")]
    MalformedSequence { path: PathBuf, reason: String },

    #[error("parse error on line {line}: {reason}")]
    ParseError { line: usize, reason: String },

    #[error("camera pose sees no scene geometry")]
    EmptyFrame,

    #[error("trajectory alignment is degenerate: {0}")]
    DegenerateAlignment(&'static str),

    #[error("insufficient trajectory overlap: {0}")]
    InsufficientOverlap(String),

    #[error("unknown scene `{0}`")]
    UnknownScene(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
