//! Numerical kernels for circular object detection: circle geometry and
//! generalized circle IoU with analytic gradients, circle-query attention
//! mechanics, set-to-set matching losses, mask losses, average-precision
//! evaluation, deterministic synthetic scenes with bit-exact file formats,
//! and the independent oracles used to verify all of it.

pub mod attention;
pub mod error;
pub mod evalap;
pub mod geom;
pub mod linalg;
pub mod matching;
pub mod oracle;
pub mod segloss;
pub mod synthgen;

pub use attention::{AttentionVariant, CdaInit, CircleQuery, DecoderWeights, FeatureGrid};
pub use error::{Error, Result};
pub use evalap::{ApReport, Detection};
pub use geom::Circle;
pub use matching::{Assignment, GroundTruth, GtLabel, LossConfig, Prediction};
pub use segloss::{BinaryMask, MaskPatch};
pub use synthgen::{AnnotationFile, GenConfig, PredictionFile, SceneTruth};
