//! Rendering and the corner / flow / epipolar stack.

pub mod epipolar;
pub mod frame;
pub mod harris;
pub mod lk;
pub mod scene;

use serde::{Deserialize, Serialize};

pub use epipolar::{decompose_essential, estimate_essential, max_epipolar_residual, Correspondences, RelativeMotion};
pub use frame::{Frame, Image};
pub use harris::{harris_corners, HarrisConfig};
pub use lk::{lucas_kanade, LkConfig, TrackStatus, TrackedPoint};
pub use scene::{render, Intrinsics, Landmark, SyntheticScene};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VisionConfig {
    pub max_corners: usize,
    /// Gaussian blur applied to both frames before detection and tracking; 0 disables it.
    pub presmooth: f64,
    pub harris: HarrisConfig,
    pub lk: LkConfig,
}

impl Default for VisionConfig {
    fn default() -> Self {
        VisionConfig { max_corners: 150, presmooth: 1.0, harris: HarrisConfig::default(), lk: LkConfig::default() }
    }
}

/// Relative motion between two frames plus the tracks it was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionEstimate {
    pub motion: RelativeMotion,
    pub correspondences: Correspondences,
    pub detected: usize,
}

/// Corners in `a`, tracked into `b`, fed to the eight-point solver.
pub fn estimate_motion(a: &Frame, b: &Frame, k: &Intrinsics, config: &VisionConfig) -> Result<MotionEstimate> {
    let (a, b) = if config.presmooth > 0.0 {
        (smooth(a, config.presmooth)?, smooth(b, config.presmooth)?)
    } else {
        (a.clone(), b.clone())
    };
    let corners = harris_corners(&a, config.max_corners, &config.harris);
    let tracks = lucas_kanade(&a, &b, &corners, &config.lk)?;
    let (p0, p1): (Vec<_>, Vec<_>) = tracks.iter().filter(|t| t.accepted()).map(|t| (t.from, t.to)).unzip();
    let corr = Correspondences::from_pixels(k, p0, p1)?;
    let e = estimate_essential(&corr)?;
    let motion = decompose_essential(&e, &corr)?;
    Ok(MotionEstimate { motion, correspondences: corr, detected: corners.len() })
}

fn smooth(f: &Frame, sigma: f64) -> Result<Frame> {
    let img = f.to_image().gaussian_blur(sigma);
    Frame::new(img.width, img.height, img.data)
}
