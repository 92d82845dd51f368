//! Error type shared by all kernels in this crate.

use std::fmt;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by geometry, loss, attention and I/O kernels.
#[derive(Clone, Debug, PartialEq)]
pub enum Error {
    /// A circle had a non-positive radius or a non-finite field.
    InvalidCircle { x: f64, y: f64, r: f64, reason: &'static str },
    /// The gradient was requested at a configuration where it does not exist
    /// (tangency, containment boundary, or coincident equal circles).
    NonDifferentiablePoint { detail: &'static str },
    /// Vector or matrix dimensions do not chain.
    ShapeError { context: &'static str, expected: usize, got: usize },
    /// Matching was requested with an empty prediction set.
    EmptyPredictions,
    /// A cost matrix entry was NaN or infinite.
    NonFiniteCost { row: usize, col: usize },
    /// An assignment does not fit the prediction/ground-truth sets.
    InvalidAssignment { reason: String },
    /// The crop region lies fully outside the image.
    EmptyRegion,
    /// Scene generation exhausted its rejection-sampling budget.
    InfeasibleConfig { attempts: usize },
    /// A serialized file is malformed; `offset` is the byte position at
    /// which reading failed.
    Format { offset: u64, reason: String },
    /// A prediction references an image id absent from the ground truth.
    MissingImage { image_id: u64 },
    /// An exhaustive oracle was asked to enumerate too large an instance.
    TooLarge { limit: usize, got: usize },
    /// A per-head attention row does not sum to 1.
    NonNormalizedAttention { head: usize, sum: f64 },
    /// A function handed to a numeric routine returned NaN or infinity.
    NonFiniteFunction,
    /// The optimization loss became non-finite.
    DivergedLoss { step: usize },
    /// Underlying I/O failure.
    Io { reason: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidCircle { x, y, r, reason } => {
                write!(f, "invalid circle ({x}, {y}, {r}): {reason}")
            }
            Error::NonDifferentiablePoint { detail } => {
                write!(f, "gradient undefined at this configuration: {detail}")
            }
            Error::ShapeError { context, expected, got } => {
                write!(f, "shape mismatch in {context}: expected {expected}, got {got}")
            }
            Error::EmptyPredictions => write!(f, "matching requires at least one prediction"),
            Error::NonFiniteCost { row, col } => {
                write!(f, "non-finite cost at ({row}, {col})")
            }
            Error::InvalidAssignment { reason } => write!(f, "invalid assignment: {reason}"),
            Error::EmptyRegion => write!(f, "crop region lies outside the image"),
            Error::InfeasibleConfig { attempts } => {
                write!(f, "scene generation infeasible after {attempts} attempts")
            }
            Error::Format { offset, reason } => {
                write!(f, "format error at byte {offset}: {reason}")
            }
            Error::MissingImage { image_id } => {
                write!(f, "prediction references unknown image id {image_id}")
            }
            Error::TooLarge { limit, got } => {
                write!(f, "instance too large for exhaustive oracle: {got} > {limit}")
            }
            Error::NonNormalizedAttention { head, sum } => {
                write!(f, "attention row of head {head} sums to {sum}, expected 1")
            }
            Error::NonFiniteFunction => write!(f, "function value is not finite"),
            Error::DivergedLoss { step } => write!(f, "loss diverged at step {step}"),
            Error::Io { reason } => write!(f, "i/o error: {reason}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io { reason: e.to_string() }
    }
}
