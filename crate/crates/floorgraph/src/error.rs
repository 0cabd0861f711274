//! Crate-wide error type.

use crate::graph::ViewId;
use crate::trainer::TrainingLog;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A frame produced no keypoints; the caller counts it toward the
    /// failure rate.
    #[error("view {0} has no keypoints")]
    EmptyView(ViewId),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("training diverged: non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize, log: Box<TrainingLog> },

    #[error("invalid extent: {0}")]
    InvalidExtent(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unsupported format version: expected {expected}, found {found}")]
    Version { expected: String, found: String },

    #[error("view {0} has keypoints but no pose")]
    Join(ViewId),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("map database is empty")]
    EmptyDatabase,

    /// Map embeddings were produced by a different encoder than the one
    /// supplied for querying.
    #[error("encoder fingerprint mismatch: map built with {expected}, got {found}")]
    EncoderMismatch { expected: String, found: String },

    #[error("corrupt map file: {0}")]
    Format(String),

    /// Fewer than four correspondences; drives the rotation failure rate.
    #[error("too few correspondences for homography: {0} < 4")]
    TooFewMatches(usize),

    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),

    /// Density clustering left every point as noise.
    #[error("no cluster found among retrieved positions")]
    NoCluster,

    #[error("evaluation views overlap the map: {0} shared ids (first: {1})")]
    Leakage(usize, ViewId),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
