//! Stride-level thigh-angle forecasting from depth images and IMU kinematics.
//!
//! - [`signal`]: filtering, calibration, gait-event segmentation, depth preprocessing.
//! - [`model`]: patch embeddings, the two-stage fusion transformer and its comparators,
//!   plus analytic FLOPs/parameter accounting.
//! - [`dataset`]: tensor containers, on-disk stride datasets, synthetic generation,
//!   subject splits and batching.
//! - [`train`]: loss, metrics, the training loop, checkpoints and evaluation.

pub mod dataset;
pub mod error;
pub mod model;
pub mod signal;
pub mod train;
pub mod types;

pub use error::{Error, Result};
pub use types::{Side, StrideSample, Terrain};
