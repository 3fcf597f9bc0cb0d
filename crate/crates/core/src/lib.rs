//! Optimal control of connected automated vehicles crossing a signal-free
//! intersection: per-vehicle closed-form / root-found solutions under speed,
//! control, rear-end and lateral safety constraints, queue coordination, and an
//! independent verifier.

pub mod bounds;
pub mod coordinator;
pub mod model;
pub mod poly;
pub mod solver;
pub mod trajectory;
pub mod verifier;

pub use model::{ConflictMatrix, ModelError, ScenarioConfig, VehicleArrival};
pub use trajectory::{ArcKind, ArcSegment, PiecewiseTrajectory, State};
