//! Sample-based safe learning model predictive control.
//!
//! The library is organized around one iteration loop: run an episode with the
//! adaptive-penalty path-integral solver, and when the episode is feasible,
//! fold its trajectory into the sampled safe set and refit the spline-flow
//! value model on the recorded costs-to-go. The solver keeps exploration
//! inside the region certified by earlier iterations through two soft
//! constraints: distance to the admissible set along the horizon, and distance
//! to the convex hull of neighboring safe-set states at the horizon end.

pub mod fsio;
pub mod hull;
pub mod mppi;
pub mod penalty;
pub mod rng;
pub mod runner;
pub mod safeset;
pub mod sampling;
pub mod systems;
pub mod types;
pub mod valuefn;

#[cfg(feature = "testutil")]
pub mod testutil;

pub use types::{ControlSequence, ControlVector, IterationRecord, StateVector, Trajectory};

use thiserror::Error;

/// Crate-wide error type. Variant messages are part of the CLI-facing
/// contract; keep them stable.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    #[error("trajectory does not reach target")]
    NonTerminating,

    #[error("cannot insert infeasible record into safe set")]
    InfeasibleRecord,

    #[error("safe set is empty")]
    EmptySafeSet,

    #[error("input outside bounds: component {index} value {value}")]
    InputOutsideBounds { index: usize, value: f64 },

    #[error("dynamics diverged")]
    DynamicsDiverged,

    #[error("off-track projection: no unique closest centerline point")]
    OffTrackProjection,

    #[error("no finite-cost samples")]
    NoFiniteCostSamples,

    #[error("bootstrap failed: {0}")]
    BootstrapFailed(String),

    #[error("training failure: {0}")]
    TrainingFailure(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
