//! Conformalized multimodal pose regression with optical-flow reasoning.

pub mod baseline;
pub mod classifier;
pub mod conformal;
pub mod discretize;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod reasoning;
pub mod vision;

pub use discretize::{fit_grid, ClassLabel, Interval, QuantileGrid, POSE_DIMS};
pub use error::{Error, Result};
pub use geometry::{quat_distance, Pose, Quaternion, RotationMatrix, Trajectory};
