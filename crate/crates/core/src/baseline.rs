//! Direct regression rollout and trajectory error metrics.

use serde::{Deserialize, Serialize};

use crate::classifier::{FeatureExtractor, RegressionBaseline};
use crate::error::{Error, Result};
use crate::geometry::{quat_distance, Trajectory, TrajectoryPoint};
use crate::vision::Frame;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub trajectory: Trajectory,
    pub outputs: Vec<[f64; 7]>,
}

/// Regresses every frame independently.
pub fn baseline_rollout(model: &RegressionBaseline, extractor: &FeatureExtractor, frames: &[Frame], frame_ids: &[usize]) -> Result<BaselineResult> {
    if frames.len() != frame_ids.len() {
        return Err(Error::invalid("one frame index per frame required"));
    }
    let features = frames.iter().map(|f| extractor.extract(f)).collect::<Result<Vec<_>>>()?;
    let poses = model.predict_batch(&features)?;
    let outputs = poses.iter().map(|p| p.to_vector()).collect();
    let points = frame_ids.iter().zip(poses).map(|(&frame, pose)| TrajectoryPoint { frame, pose }).collect();
    Ok(BaselineResult { trajectory: Trajectory::new(points)?, outputs })
}

fn check_aligned(a: &Trajectory, b: &Trajectory) -> Result<()> {
    if a.is_empty() || a.len() != b.len() || a.points().iter().zip(b.points()).any(|(p, q)| p.frame != q.frame) {
        return Err(Error::invalid("trajectories must be non-empty and share frame indices"));
    }
    Ok(())
}

/// Root mean squared position error.
pub fn rmse(predicted: &Trajectory, truth: &Trajectory) -> Result<f64> {
    check_aligned(predicted, truth)?;
    let sum: f64 = predicted.points().iter().zip(truth.points()).map(|(p, t)| (p.pose.position - t.pose.position).norm_squared()).sum();
    Ok((sum / predicted.len() as f64).sqrt())
}

/// Mean chordal distance between canonical quaternions.
pub fn orientation_error(predicted: &Trajectory, truth: &Trajectory) -> Result<f64> {
    check_aligned(predicted, truth)?;
    let sum: f64 = predicted.points().iter().zip(truth.points()).map(|(p, t)| quat_distance(p.pose.orientation, t.pose.orientation)).sum();
    Ok(sum / predicted.len() as f64)
}
