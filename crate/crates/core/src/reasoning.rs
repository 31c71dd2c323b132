//! Picks one mode out of a multimodal region using the relative motion
//! between consecutive frames, and rolls that choice along a sequence.

use std::cmp::Ordering;
use std::io::Write;
use std::ops::Range;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::classifier::FeatureExtractor;
use crate::conformal::{CalibratedModel, UncertaintyRegion};
use crate::error::{Error, Result};
use crate::geometry::{compose_rotation, quat_distance, quat_to_rotmat, rotmat_to_quat, Pose, Quaternion, RotationMatrix, Trajectory, TrajectoryPoint};
use crate::vision::{estimate_motion, max_epipolar_residual, Frame, Intrinsics, VisionConfig};

pub const POSITION_DIMS: Range<usize> = 0..3;
pub const ORIENTATION_DIMS: Range<usize> = 3..7;
/// Quaternion midpoints shorter than this cannot be renormalized.
pub const MIN_QUATERNION_NORM: f64 = 1e-6;
/// Steps at most this long are treated as no motion.
pub const STATIONARY_STEP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidatePose {
    pub position: Vector3<f64>,
    pub orientation: Quaternion,
    /// Product of the member intervals' softmax masses over the enumerated dimensions.
    pub mass: f64,
    /// Index of the originating cuboid in enumeration order.
    pub source: usize,
    /// False when the quaternion midpoint was too short to renormalize.
    pub valid: bool,
}

impl CandidatePose {
    pub fn pose(&self) -> Result<Pose> {
        Pose::new(self.position, self.orientation)
    }
}

fn best_interval(region: &UncertaintyRegion, dim: usize) -> usize {
    let d = &region.dims[dim];
    (0..d.len()).fold(0, |b, i| if d[i].mass > d[b].mass { i } else { b })
}

fn build(region: &UncertaintyRegion, picks: &[usize], dims: &Range<usize>, source: usize) -> CandidatePose {
    let mid = |d: usize| region.dims[d][picks[d]].interval.midpoint();
    let mass = dims.clone().map(|d| region.dims[d][picks[d]].mass).product();
    let position = Vector3::new(mid(0), mid(1), mid(2));
    let raw = Quaternion::new(mid(3), mid(4), mid(5), mid(6));
    let (orientation, valid) = if raw.norm() < MIN_QUATERNION_NORM {
        (Quaternion::IDENTITY, false)
    } else {
        (raw.normalized().expect("norm checked").canonical(), true)
    };
    CandidatePose { position, orientation, mass, source, valid }
}

/// One candidate per cuboid over `dims`; dimensions outside `dims` take
/// their highest-mass interval.
pub fn enumerate_over(region: &UncertaintyRegion, dims: Range<usize>) -> Vec<CandidatePose> {
    let base: Vec<usize> = (0..region.dims.len()).map(|d| best_interval(region, d)).collect();
    region
        .cuboids(dims.clone())
        .enumerate()
        .map(|(source, idx)| {
            let mut picks = base.clone();
            for (d, i) in dims.clone().zip(idx) {
                picks[d] = i;
            }
            build(region, &picks, &dims, source)
        })
        .collect()
}

/// One candidate per cuboid of the full region.
pub fn enumerate_candidates(region: &UncertaintyRegion) -> Vec<CandidatePose> {
    enumerate_over(region, 0..region.dims.len())
}

/// The highest-mass cuboid (each dimension's heaviest interval).
pub fn highest_mass_candidate(region: &UncertaintyRegion) -> CandidatePose {
    let picks: Vec<usize> = (0..region.dims.len()).map(|d| best_interval(region, d)).collect();
    build(region, &picks, &(0..region.dims.len()), 0)
}

/// Lower objective wins, then higher mass, then lower cuboid index.
fn rank(a: &(f64, &CandidatePose), b: &(f64, &CandidatePose)) -> Ordering {
    a.0.total_cmp(&b.0).then(b.1.mass.total_cmp(&a.1.mass)).then(a.1.source.cmp(&b.1.source))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub candidate: CandidatePose,
    pub objective: f64,
    pub fallback: bool,
}

fn argmin(candidates: &[CandidatePose], objective: impl Fn(&CandidatePose) -> f64) -> Result<Selection> {
    candidates
        .iter()
        .filter(|c| c.valid)
        .map(|c| (objective(c), c))
        .min_by(rank)
        .map(|(objective, c)| Selection { candidate: *c, objective, fallback: false })
        .ok_or(Error::NoCandidate)
}

/// Heaviest valid candidate.
pub fn select_by_mass(candidates: &[CandidatePose]) -> Result<Selection> {
    let mut s = argmin(candidates, |_| 0.0)?;
    s.fallback = true;
    Ok(s)
}

/// Expected next orientation `R_relative * R_previous` as a quaternion.
pub fn predicted_orientation(r_relative: &RotationMatrix, q_previous: Quaternion) -> Result<Quaternion> {
    Ok(rotmat_to_quat(&compose_rotation(r_relative, &quat_to_rotmat(q_previous)?)))
}

/// Candidate whose orientation is closest to the composed prediction.
pub fn select_orientation(candidates: &[CandidatePose], r_relative: &RotationMatrix, q_previous: Quaternion) -> Result<Selection> {
    let q_next = predicted_orientation(r_relative, q_previous)?;
    argmin(candidates, |c| quat_distance(c.orientation, q_next))
}

/// Mismatch between the unit motion direction and the normalized step
/// from `t_previous` to the candidate. A zero step counts as the zero
/// vector, giving `|t_relative|`.
pub fn position_objective(candidate: &Vector3<f64>, t_relative: &Vector3<f64>, t_previous: &Vector3<f64>) -> f64 {
    let step = candidate - t_previous;
    let n = step.norm();
    if n <= STATIONARY_STEP {
        t_relative.norm()
    } else {
        (t_relative - step / n).norm()
    }
}

/// Candidate whose step from `t_previous` best matches the direction
/// `t_relative` (world frame). Falls back to mass when every candidate is
/// stationary.
pub fn select_position(candidates: &[CandidatePose], t_relative: &Vector3<f64>, t_previous: &Vector3<f64>) -> Result<Selection> {
    let moving = candidates.iter().any(|c| c.valid && (c.position - t_previous).norm() > STATIONARY_STEP);
    if !moving {
        return select_by_mass(candidates);
    }
    argmin(candidates, |c| position_objective(&c.position, t_relative, t_previous))
}

/// Direction of travel in world coordinates from a relative motion whose
/// translation is expressed in the second camera: with `x1 = R x0 + t`,
/// the camera centre moves along `-R1^T t`.
pub fn world_direction(t_relative: &Vector3<f64>, r_next: &RotationMatrix) -> Vector3<f64> {
    let d = -r_next.transpose().apply(t_relative);
    let n = d.norm();
    if n > 0.0 {
        d / n
    } else {
        d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub frame: usize,
    pub set_sizes: Vec<usize>,
    pub interval_counts: Vec<usize>,
    pub cuboids: usize,
    pub position_candidates: usize,
    pub orientation_candidates: usize,
    pub conformal_fallback: bool,
    pub vision_fallback: bool,
    pub vision_error: Option<String>,
    pub stationary_fallback: bool,
    pub tracked_points: usize,
    pub epipolar_residual: Option<f64>,
    pub position_objective: Option<f64>,
    pub orientation_objective: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutResult {
    pub trajectory: Trajectory,
    pub diagnostics: Vec<StepDiagnostics>,
}

impl RolloutResult {
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for d in &self.diagnostics {
            serde_json::to_writer(&mut out, d)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn mean_set_size(&self) -> f64 {
        let n = self.diagnostics.len() as f64;
        self.diagnostics.iter().map(|d| d.set_sizes.iter().sum::<usize>() as f64 / d.set_sizes.len() as f64).sum::<f64>() / n
    }

    /// Steps that fell back to mass for any reason after the first.
    pub fn fallback_rate(&self) -> f64 {
        let steps = &self.diagnostics[1.min(self.diagnostics.len())..];
        if steps.is_empty() {
            return 0.0;
        }
        steps.iter().filter(|d| d.vision_fallback || d.stationary_fallback || d.conformal_fallback).count() as f64 / steps.len() as f64
    }
}

/// Everything the rollout needs besides the calibrated model.
#[derive(Debug, Clone, Copy)]
pub struct RolloutContext<'a> {
    pub extractor: &'a FeatureExtractor,
    pub intrinsics: &'a Intrinsics,
    pub vision: &'a VisionConfig,
}

/// Sequential mode selection. Step 0 takes the heaviest cuboid; later steps
/// pick orientation and position separately against the frame-pair motion.
pub fn rollout(cal: &CalibratedModel, ctx: RolloutContext, frames: &[Frame], frame_ids: &[usize]) -> Result<RolloutResult> {
    if frames.len() < 2 || frames.len() != frame_ids.len() {
        return Err(Error::invalid("rollout needs at least two frames and one index per frame"));
    }
    let features = frames.iter().map(|f| ctx.extractor.extract(f)).collect::<Result<Vec<_>>>()?;
    let sets = cal.predict_sets(&features)?;
    let mut points = Vec::with_capacity(frames.len());
    let mut diagnostics = Vec::with_capacity(frames.len());
    let mut prev: Option<Pose> = None;

    for (i, set) in sets.iter().enumerate() {
        let region = cal.to_region(set)?;
        let mut diag = StepDiagnostics {
            frame: frame_ids[i],
            set_sizes: set.classes.iter().map(Vec::len).collect(),
            interval_counts: region.interval_counts(),
            cuboids: region.cuboid_count(),
            position_candidates: region.cuboid_count_in(POSITION_DIMS),
            orientation_candidates: region.cuboid_count_in(ORIENTATION_DIMS),
            conformal_fallback: set.any_fallback(),
            vision_fallback: false,
            vision_error: None,
            stationary_fallback: false,
            tracked_points: 0,
            epipolar_residual: None,
            position_objective: None,
            orientation_objective: None,
        };
        let pose = match prev {
            None => highest_mass_candidate(&region).pose()?,
            Some(p) => {
                let pos = enumerate_over(&region, POSITION_DIMS);
                let ori = enumerate_over(&region, ORIENTATION_DIMS);
                match estimate_motion(&frames[i - 1], &frames[i], ctx.intrinsics, ctx.vision) {
                    Ok(est) => {
                        let m = est.motion;
                        diag.tracked_points = est.correspondences.len();
                        let e = crate::vision::epipolar::skew(&m.translation) * m.rotation.matrix();
                        diag.epipolar_residual = Some(max_epipolar_residual(&e, &est.correspondences));
                        let so = select_orientation(&ori, &m.rotation, p.orientation)?;
                        let r_next = compose_rotation(&m.rotation, &p.rotation());
                        let dir = world_direction(&m.translation, &r_next);
                        let sp = select_position(&pos, &dir, &p.position)?;
                        diag.stationary_fallback = sp.fallback;
                        diag.orientation_objective = Some(so.objective);
                        diag.position_objective = (!sp.fallback).then_some(sp.objective);
                        Pose::new(sp.candidate.position, so.candidate.orientation)?
                    }
                    Err(e) => {
                        diag.vision_fallback = true;
                        diag.vision_error = Some(e.kind().to_string());
                        let sp = select_by_mass(&pos)?;
                        let so = select_by_mass(&ori)?;
                        Pose::new(sp.candidate.position, so.candidate.orientation)?
                    }
                }
            }
        };
        prev = Some(pose);
        points.push(TrajectoryPoint { frame: frame_ids[i], pose });
        diagnostics.push(diag);
    }
    Ok(RolloutResult { trajectory: Trajectory::new(points)?, diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformal::RegionInterval;
    use crate::discretize::Interval;
    use proptest::prelude::*;

    fn iv(lo: f64, hi: f64, mass: f64) -> RegionInterval {
        RegionInterval { interval: Interval::new(lo, hi), classes: 0..1, mass }
    }

    /// Region centred on the identity orientation with the given position intervals.
    fn region(x: Vec<RegionInterval>) -> UncertaintyRegion {
        UncertaintyRegion {
            dims: vec![
                x,
                vec![iv(-0.5, 0.5, 1.0)],
                vec![iv(-0.5, 0.5, 1.0)],
                vec![iv(0.9, 1.1, 1.0)],
                vec![iv(-0.1, 0.1, 1.0)],
                vec![iv(-0.1, 0.1, 1.0)],
                vec![iv(-0.1, 0.1, 1.0)],
            ],
        }
    }

    fn cand(position: [f64; 3], orientation: Quaternion, mass: f64, source: usize) -> CandidatePose {
        CandidatePose { position: Vector3::from(position), orientation, mass, source, valid: true }
    }

    #[test]
    fn unimodal_region_gives_one_candidate_at_the_centre() {
        let c = enumerate_candidates(&region(vec![iv(1.0, 3.0, 1.0)]));
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].position, Vector3::new(2.0, 0.0, 0.0));
        assert_eq!(c[0].orientation, Quaternion::IDENTITY);
    }

    #[test]
    fn disjoint_intervals_give_their_midpoints() {
        let c = enumerate_candidates(&region(vec![iv(0.0, 2.0, 0.5), iv(6.0, 8.0, 0.4)]));
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].position.x, 1.0);
        assert_eq!(c[1].position.x, 7.0);
    }

    #[test]
    fn zero_quaternion_midpoint_is_invalid() {
        let mut r = region(vec![iv(0.0, 1.0, 1.0)]);
        r.dims[3] = vec![iv(-0.1, 0.1, 1.0)];
        let c = enumerate_candidates(&r);
        assert!(!c[0].valid);
        assert!(matches!(select_by_mass(&c), Err(Error::NoCandidate)));
    }

    #[test]
    fn orientation_equal_to_previous_wins_under_identity_motion() {
        let q = Quaternion::from_axis_angle(Vector3::new(0.0, 0.0, 1.0), 0.4).unwrap();
        let other = Quaternion::from_axis_angle(Vector3::new(0.0, 0.0, 1.0), 1.0).unwrap();
        let c = vec![cand([0.0; 3], other, 0.9, 0), cand([0.0; 3], q, 0.1, 1)];
        let s = select_orientation(&c, &RotationMatrix::identity(), q).unwrap();
        assert_eq!(s.candidate.source, 1);
        assert!(s.objective < 1e-12);
    }

    #[test]
    fn position_example() {
        let c = vec![cand([2.0, 0.0, 0.0], Quaternion::IDENTITY, 0.1, 0), cand([1.0, 2.0, 0.0], Quaternion::IDENTITY, 0.9, 1)];
        let s = select_position(&c, &Vector3::x(), &Vector3::x()).unwrap();
        assert_eq!(s.candidate.source, 0);
        assert_eq!(s.objective, 0.0);
        let other = position_objective(&c[1].position, &Vector3::x(), &Vector3::x());
        assert!((other - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn single_candidate_is_always_chosen() {
        let c = vec![cand([-5.0, 0.0, 0.0], Quaternion::IDENTITY, 0.1, 0)];
        assert_eq!(select_position(&c, &Vector3::x(), &Vector3::zeros()).unwrap().candidate.source, 0);
    }

    #[test]
    fn symmetric_tie_goes_to_mass_then_index() {
        let c = vec![
            cand([1.0, 1.0, 0.0], Quaternion::IDENTITY, 0.3, 0),
            cand([1.0, -1.0, 0.0], Quaternion::IDENTITY, 0.6, 1),
        ];
        let s = select_position(&c, &Vector3::x(), &Vector3::zeros()).unwrap();
        assert_eq!(s.candidate.source, 1);
        let c2 = vec![c[0], CandidatePose { mass: 0.3, ..c[1] }];
        assert_eq!(select_position(&c2, &Vector3::x(), &Vector3::zeros()).unwrap().candidate.source, 0);
    }

    #[test]
    fn all_stationary_falls_back_to_mass() {
        let c = vec![cand([1.0, 0.0, 0.0], Quaternion::IDENTITY, 0.2, 0), cand([1.0, 0.0, 0.0], Quaternion::IDENTITY, 0.7, 1)];
        let s = select_position(&c, &Vector3::x(), &Vector3::x()).unwrap();
        assert!(s.fallback);
        assert_eq!(s.candidate.source, 1);
    }

    #[test]
    fn world_direction_undoes_the_camera_frame() {
        // Camera yawed about y while moving along world +x.
        let r1 = RotationMatrix::from_axis_angle(Vector3::y(), 0.7).unwrap();
        let (c0, c1) = (Vector3::new(0.0, 0.0, 0.0), Vector3::new(2.0, 0.0, 0.0));
        let t = r1.apply(&(c0 - c1));
        let d = world_direction(&t, &r1);
        assert!((d - Vector3::x()).norm() < 1e-12);
    }

    proptest! {
        #[test]
        fn selection_ignores_candidate_order(
            pts in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0, 0.0f64..1.0), 1..12),
            rot in 0usize..12,
        ) {
            let c: Vec<CandidatePose> = pts.iter().enumerate()
                .map(|(i, (x, y, m))| cand([*x, *y, 0.0], Quaternion::from_axis_angle(Vector3::z(), *x).unwrap(), *m, i))
                .collect();
            let mut shuffled = c.clone();
            shuffled.rotate_left(rot % c.len());
            shuffled.reverse();
            let t = Vector3::new(0.6, 0.8, 0.0);
            let a = select_position(&c, &t, &Vector3::zeros()).unwrap();
            let b = select_position(&shuffled, &t, &Vector3::zeros()).unwrap();
            prop_assert_eq!(a.candidate.source, b.candidate.source);
            let r = RotationMatrix::from_axis_angle(Vector3::z(), 0.3).unwrap();
            let a = select_orientation(&c, &r, Quaternion::IDENTITY).unwrap();
            let b = select_orientation(&shuffled, &r, Quaternion::IDENTITY).unwrap();
            prop_assert_eq!(a.candidate.source, b.candidate.source);
        }

        #[test]
        fn position_objective_ignores_step_scale(x in -3.0f64..3.0, y in -3.0f64..3.0, s in 0.01f64..100.0) {
            prop_assume!(x.abs() + y.abs() > 1e-3);
            let t = Vector3::new(0.0, 1.0, 0.0);
            let prev = Vector3::new(0.5, -0.5, 1.0);
            let a = position_objective(&(prev + Vector3::new(x, y, 0.0)), &t, &prev);
            let b = position_objective(&(prev + s * Vector3::new(x, y, 0.0)), &t, &prev);
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn orientation_matches_brute_force(angles in proptest::collection::vec(-1.0f64..1.0, 1..6), step in -0.3f64..0.3) {
            let c: Vec<CandidatePose> = angles.iter().enumerate()
                .map(|(i, a)| cand([0.0; 3], Quaternion::from_axis_angle(Vector3::y(), *a).unwrap(), 0.5, i))
                .collect();
            let r = RotationMatrix::from_axis_angle(Vector3::y(), step).unwrap();
            let q_prev = Quaternion::from_axis_angle(Vector3::y(), 0.1).unwrap();
            let q_next = Quaternion::from_axis_angle(Vector3::y(), 0.1 + step).unwrap();
            let s = select_orientation(&c, &r, q_prev).unwrap();
            let best = c.iter().map(|k| quat_distance(k.orientation, q_next)).fold(f64::INFINITY, f64::min);
            prop_assert!((quat_distance(s.candidate.orientation, q_next) - best).abs() < 1e-9);
        }
    }
}
