//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A numeric input contained NaN or infinity.
    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    /// A field failed validation (range, sign, shape constraints).
    #[error("invalid {field}: {reason}")]
    Validation { field: String, reason: String },

    /// A file could not be parsed; `location` points at the offending spot.
    #[error("parse error in {path} at {location}: {reason}")]
    Parse {
        path: String,
        location: String,
        reason: String,
    },

    /// Robot model structural problem (cycle, duplicate frame, bad limits).
    #[error("robot model error: {0}")]
    Model(String),

    /// Dimension mismatch between a vector and what the model expects.
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    /// Requested frame does not exist in the model.
    #[error("unknown frame: {0}")]
    UnknownFrame(String),

    /// Handle/head centroids too close to orient the grasp frame.
    #[error("ambiguous grasp-box orientation: centroids {distance} m apart")]
    AmbiguousOrientation { distance: f64 },

    /// Stepping an environment whose episode already terminated.
    #[error("episode already terminated")]
    EpisodeDone,

    /// Delay queue popped before any value was pushed.
    #[error("delay queue read before first push")]
    EmptyDelayQueue,

    /// Trajectory has no frame above the lift-off threshold.
    #[error("trajectory never lifts above threshold ({max_z:.4} m max vs {thresh:.4} m required)")]
    NeverLifted { max_z: f64, thresh: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
