//! Simulation and benchmarking library for ultra-fine attitude estimation
//! with an event camera observing a star field.
//!
//! The crate is organized as a pipeline of small modules:
//!
//! - [`sky`]: star catalogs and tangent-plane projection onto the sensor.
//! - [`trajectory`]: ground-truth pointing trajectories with injected jitter.
//! - [`evsim`]: event synthesis from a moving star field, plus event file I/O.
//! - [`pipeline`]: event batching into binary frames, median filtering, and
//!   cluster detection.
//! - [`tracker`]: star-map based translation tracking with outlier rejection.
//! - [`control`]: constant-velocity Kalman filter, PID controller, and a
//!   quantized micro-motion stage model.
//! - [`harness`]: experiment orchestration, metrics, persistence, reports.

pub mod control;
pub mod evsim;
pub mod harness;
pub mod pipeline;
pub mod sky;
pub mod tracker;
pub mod trajectory;

/// Workspace-wide 2-vector in pixel or arcsecond units.
pub type Vec2 = nalgebra::Vector2<f64>;

pub use sky::{CatalogStar, Pointing, SensorGeometry};
pub use trajectory::{GroundTruthSample, NoisePreset, TrajectoryKind, TrajectorySpec};
