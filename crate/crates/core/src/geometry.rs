//! Pose algebra: quaternions in `(w, x, y, z)` order, rotation matrices and
//! trajectories.
//!
//! A pose stores the camera centre in world coordinates and the
//! world-to-camera rotation, so a world point `X` maps to camera coordinates
//! as `R (X - c)`. With that convention the rotation of the next frame is
//! `R_next = R_relative * R_previous`, where `R_relative` is the rotation
//! recovered from the essential matrix between the two frames.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|q| - 1` accepted by conversions.
pub const UNIT_TOLERANCE: f64 = 1e-6;
/// Tolerance for orthonormality and determinant checks on rotation matrices.
pub const ROTATION_TOLERANCE: f64 = 1e-9;
/// Composition drift above which the product is projected back onto SO(3).
const DRIFT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quaternion { w, x, y, z }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Quaternion::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(self) -> f64 {
        self.to_array().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn neg(self) -> Self {
        Quaternion::new(-self.w, -self.x, -self.y, -self.z)
    }

    /// Rotation of `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Result<Self> {
        let n = axis.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::invalid("rotation axis must be non-zero and finite"));
        }
        let a = axis / n;
        let (s, c) = (angle / 2.0).sin_cos();
        Ok(Quaternion::new(c, a.x * s, a.y * s, a.z * s).canonical())
    }

    /// Scales to unit norm. Fails on zero or non-finite input.
    pub fn normalized(self) -> Result<Self> {
        let n = self.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::invalid("cannot normalize a zero or non-finite quaternion"));
        }
        Ok(Quaternion::new(self.w / n, self.x / n, self.y / n, self.z / n))
    }

    /// Picks the representative with `w >= 0`; when `w == 0` the first
    /// non-zero of `(x, y, z)` is made non-negative.
    pub fn canonical(self) -> Self {
        let flip = if self.w != 0.0 {
            self.w < 0.0
        } else {
            [self.x, self.y, self.z]
                .into_iter()
                .find(|v| *v != 0.0)
                .is_some_and(|v| v < 0.0)
        };
        if flip {
            self.neg()
        } else {
            self
        }
    }

    /// Hamilton product `self * rhs`.
    pub fn mul(self, rhs: Quaternion) -> Quaternion {
        let (a, b) = (self, rhs);
        Quaternion::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }

    /// Spherical linear interpolation along the shorter arc.
    pub fn slerp(self, other: Quaternion, t: f64) -> Quaternion {
        let a = self.to_array();
        let mut b = other.to_array();
        let mut dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        if dot < 0.0 {
            b.iter_mut().for_each(|v| *v = -*v);
            dot = -dot;
        }
        let out = if dot > 0.9995 {
            let mut o = [0.0; 4];
            for i in 0..4 {
                o[i] = a[i] + t * (b[i] - a[i]);
            }
            o
        } else {
            let theta = dot.clamp(-1.0, 1.0).acos();
            let s = theta.sin();
            let wa = ((1.0 - t) * theta).sin() / s;
            let wb = (t * theta).sin() / s;
            let mut o = [0.0; 4];
            for i in 0..4 {
                o[i] = wa * a[i] + wb * b[i];
            }
            o
        };
        Quaternion::from_array(out)
            .normalized()
            .map(Quaternion::canonical)
            .unwrap_or(self)
    }
}

/// Euclidean distance between the canonical representatives of two unit
/// quaternions. Lies in `[0, 2]`.
pub fn quat_distance(a: Quaternion, b: Quaternion) -> f64 {
    let (a, b) = (a.canonical(), b.canonical());
    a.to_array()
        .iter()
        .zip(b.to_array())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// A proper rotation matrix (orthonormal, determinant one).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        RotationMatrix(Matrix3::identity())
    }

    /// Validates orthonormality and determinant within [`ROTATION_TOLERANCE`].
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("rotation matrix has non-finite entries"));
        }
        let drift = orthonormality_error(&m);
        if drift > ROTATION_TOLERANCE {
            return Err(Error::invalid(format!(
                "matrix is not orthonormal (max |R^T R - I| = {drift:e})"
            )));
        }
        let det = m.determinant();
        if (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(Error::invalid(format!("rotation determinant is {det}, expected 1")));
        }
        Ok(RotationMatrix(m))
    }

    /// Nearest rotation in the Frobenius sense (polar decomposition).
    pub fn project(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("cannot project a non-finite matrix"));
        }
        let svd = m.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut d = Matrix3::identity();
        if (u * v_t).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        RotationMatrix::new(u * d * v_t)
    }

    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Result<Self> {
        quat_to_rotmat(Quaternion::from_axis_angle(axis, angle)?)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        RotationMatrix(self.0.transpose())
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    /// Rotation angle of `self^T * other`, in radians.
    pub fn angle_to(&self, other: &RotationMatrix) -> f64 {
        let rel = self.0.transpose() * other.0;
        let v = Vector3::new(
            rel[(2, 1)] - rel[(1, 2)],
            rel[(0, 2)] - rel[(2, 0)],
            rel[(1, 0)] - rel[(0, 1)],
        );
        (v.norm() / 2.0).atan2((rel.trace() - 1.0) / 2.0)
    }
}

fn orthonormality_error(m: &Matrix3<f64>) -> f64 {
    (m.transpose() * m - Matrix3::identity()).abs().max()
}

/// Standard rotation matrix of a unit quaternion.
pub fn quat_to_rotmat(q: Quaternion) -> Result<RotationMatrix> {
    let n = q.norm();
    if !n.is_finite() || (n - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::invalid(format!("quaternion norm {n} is not unit")));
    }
    let Quaternion { w, x, y, z } = q.normalized()?;
    let m = Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    );
    RotationMatrix::new(m).or_else(|_| RotationMatrix::project(m))
}

/// Unit quaternion (canonical sign) of a rotation matrix, by Shepperd's
/// method: branch on the largest of the four squared components.
pub fn rotmat_to_quat(r: &RotationMatrix) -> Quaternion {
    let m = r.matrix();
    let trace = m.trace();
    let cands = [trace, m[(0, 0)], m[(1, 1)], m[(2, 2)]];
    let (best, _) = cands
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    let q = match best {
        0 => {
            let s = (1.0 + trace).sqrt() * 2.0;
            Quaternion::new(
                0.25 * s,
                (m[(2, 1)] - m[(1, 2)]) / s,
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(1, 0)] - m[(0, 1)]) / s,
            )
        }
        1 => {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            Quaternion::new(
                (m[(2, 1)] - m[(1, 2)]) / s,
                0.25 * s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
            )
        }
        2 => {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            Quaternion::new(
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                0.25 * s,
                (m[(1, 2)] + m[(2, 1)]) / s,
            )
        }
        _ => {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            Quaternion::new(
                (m[(1, 0)] - m[(0, 1)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                0.25 * s,
            )
        }
    };
    // A valid rotation always yields a non-zero quaternion here.
    q.normalized().unwrap_or(Quaternion::IDENTITY).canonical()
}

/// `R_relative * R_previous`, re-projected onto SO(3) if the product drifted.
pub fn compose_rotation(relative: &RotationMatrix, previous: &RotationMatrix) -> RotationMatrix {
    let m = relative.0 * previous.0;
    if orthonormality_error(&m) > DRIFT_TOLERANCE {
        // Inputs are valid rotations, so the projection cannot fail.
        RotationMatrix::project(m).expect("product of rotations is finite")
    } else {
        RotationMatrix(m)
    }
}

/// Camera pose: centre in world coordinates (metres) and world-to-camera
/// orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub orientation: Quaternion,
}

impl Pose {
    /// Normalizes and canonicalizes the orientation.
    pub fn new(position: Vector3<f64>, orientation: Quaternion) -> Result<Self> {
        if position.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("pose position must be finite"));
        }
        Ok(Pose { position, orientation: orientation.normalized()?.canonical() })
    }

    pub fn identity() -> Self {
        Pose { position: Vector3::zeros(), orientation: Quaternion::IDENTITY }
    }

    /// The seven regression targets `(x, y, z, qw, qx, qy, qz)`.
    pub fn to_vector(&self) -> [f64; 7] {
        let q = self.orientation;
        [self.position.x, self.position.y, self.position.z, q.w, q.x, q.y, q.z]
    }

    /// Inverse of [`Pose::to_vector`]; renormalizes the quaternion part.
    pub fn from_vector(v: &[f64; 7]) -> Result<Self> {
        Pose::new(Vector3::new(v[0], v[1], v[2]), Quaternion::new(v[3], v[4], v[5], v[6]))
    }

    pub fn rotation(&self) -> RotationMatrix {
        quat_to_rotmat(self.orientation).expect("pose orientation is unit by construction")
    }

    /// World point into this camera's frame.
    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation().apply(&(p - self.position))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub frame: usize,
    pub pose: Pose,
}

/// Poses ordered by strictly increasing frame index.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    points: Vec<TrajectoryPoint>,
}

impl Trajectory {
    pub fn new(points: Vec<TrajectoryPoint>) -> Result<Self> {
        if points.windows(2).any(|w| w[1].frame <= w[0].frame) {
            return Err(Error::invalid("trajectory frame indices must be strictly increasing"));
        }
        Ok(Trajectory { points })
    }

    /// Numbers the poses `0, 1, 2, ...`.
    pub fn from_poses(poses: impl IntoIterator<Item = Pose>) -> Self {
        let points = poses
            .into_iter()
            .enumerate()
            .map(|(frame, pose)| TrajectoryPoint { frame, pose })
            .collect();
        Trajectory { points }
    }

    pub fn points(&self) -> &[TrajectoryPoint] {
        &self.points
    }

    pub fn poses(&self) -> impl Iterator<Item = &Pose> + '_ {
        self.points.iter().map(|p| &p.pose)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, frame: usize, pose: Pose) -> Result<()> {
        if self.points.last().is_some_and(|p| p.frame >= frame) {
            return Err(Error::invalid("trajectory frame indices must be strictly increasing"));
        }
        self.points.push(TrajectoryPoint { frame, pose });
        Ok(())
    }

    /// Sub-trajectory of the given positions (not frame indices).
    pub fn select(&self, positions: &[usize]) -> Result<Self> {
        let points = positions
            .iter()
            .map(|&i| {
                self.points
                    .get(i)
                    .copied()
                    .ok_or_else(|| Error::invalid(format!("position {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Trajectory::new(points)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_4, FRAC_PI_8, PI};

    /// Rodrigues' formula, independent of the quaternion path.
    fn axis_angle_oracle(axis: Vector3<f64>, angle: f64) -> Matrix3<f64> {
        let k = axis.normalize();
        let kx = Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
        Matrix3::identity() + kx * angle.sin() + kx * kx * (1.0 - angle.cos())
    }

    #[test]
    fn identity_quaternion_gives_identity_matrix() {
        let r = quat_to_rotmat(Quaternion::IDENTITY).unwrap();
        assert_eq!(*r.matrix(), Matrix3::identity());
    }

    #[test]
    fn half_turn_about_z() {
        let r = quat_to_rotmat(Quaternion::new(0.0, 0.0, 0.0, 1.0)).unwrap();
        let expected = Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0));
        assert!((r.matrix() - expected).abs().max() < 1e-15);
    }

    #[test]
    fn eighth_turn_quaternion_matches_rodrigues() {
        let q = Quaternion::new(FRAC_PI_8.cos(), 0.0, 0.0, FRAC_PI_8.sin());
        let r = quat_to_rotmat(q).unwrap();
        let oracle = axis_angle_oracle(Vector3::z(), FRAC_PI_4);
        assert!((r.matrix() - oracle).abs().max() < 1e-12);
        let v = r.apply(&Vector3::x());
        let h = 2f64.sqrt() / 2.0;
        assert!((v - Vector3::new(h, h, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn non_unit_quaternion_rejected() {
        assert!(quat_to_rotmat(Quaternion::new(1.0, 0.1, 0.0, 0.0)).is_err());
    }

    #[test]
    fn rotmat_to_quat_known_values() {
        assert_eq!(rotmat_to_quat(&RotationMatrix::identity()), Quaternion::IDENTITY);
        let r = RotationMatrix::new(Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0))).unwrap();
        let q = rotmat_to_quat(&r);
        assert!(quat_distance(q, Quaternion::new(0.0, 1.0, 0.0, 0.0)) < 1e-15);
    }

    #[test]
    fn non_orthonormal_rejected() {
        let mut m = Matrix3::identity();
        m[(0, 1)] = 0.01;
        assert!(RotationMatrix::new(m).is_err());
        let reflect = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(RotationMatrix::new(reflect).is_err());
    }

    #[test]
    fn compose_examples() {
        let r = RotationMatrix::from_axis_angle(Vector3::new(1.0, 2.0, 3.0), 0.7).unwrap();
        let same = compose_rotation(&RotationMatrix::identity(), &r);
        assert!((same.matrix() - r.matrix()).abs().max() < 1e-15);
        let back = compose_rotation(&r, &r.transpose());
        assert!((back.matrix() - Matrix3::identity()).abs().max() < 1e-9);

        let z45 = RotationMatrix::from_axis_angle(Vector3::z(), FRAC_PI_4).unwrap();
        let z90 = compose_rotation(&z45, &z45);
        let oracle = axis_angle_oracle(Vector3::z(), 2.0 * FRAC_PI_4);
        assert!((z90.matrix() - oracle).abs().max() < 1e-12);
    }

    #[test]
    fn compose_reprojects_drifted_products() {
        // Many small rotations accumulate rounding; the result stays in SO(3).
        let step = RotationMatrix::from_axis_angle(Vector3::new(0.3, -0.2, 1.0), 0.013).unwrap();
        let mut acc = RotationMatrix::identity();
        for _ in 0..10_000 {
            acc = compose_rotation(&step, &acc);
        }
        assert!(orthonormality_error(acc.matrix()) <= 1e-12);
    }

    #[test]
    fn quat_distance_examples() {
        let q = Quaternion::from_axis_angle(Vector3::new(0.0, 1.0, 1.0), 1.1).unwrap();
        assert_eq!(quat_distance(q, q), 0.0);
        let d = quat_distance(Quaternion::IDENTITY, Quaternion::new(0.0, 0.0, 0.0, 1.0));
        assert!((d - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(quat_distance(q, q.neg()), 0.0);
    }

    #[test]
    fn canonical_sign_rules() {
        let q = Quaternion::new(-0.5, 0.5, -0.5, 0.5).canonical();
        assert!(q.w > 0.0);
        let q = Quaternion::new(0.0, 0.0, -1.0, 0.0).canonical();
        assert_eq!(q, Quaternion::new(-0.0, -0.0, 1.0, -0.0));
        assert!(q.y > 0.0);
    }

    #[test]
    fn trajectory_requires_increasing_frames() {
        let p = Pose::identity();
        let pts = vec![TrajectoryPoint { frame: 2, pose: p }, TrajectoryPoint { frame: 2, pose: p }];
        assert!(Trajectory::new(pts).is_err());
        let mut t = Trajectory::default();
        t.push(0, p).unwrap();
        assert!(t.push(0, p).is_err());
    }

    fn unit_quat() -> impl Strategy<Value = Quaternion> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_filter("non-degenerate", |(w, x, y, z)| w * w + x * x + y * y + z * z > 1e-3)
            .prop_map(|(w, x, y, z)| Quaternion::new(w, x, y, z).normalized().unwrap())
    }

    fn axis_angle() -> impl Strategy<Value = (Vector3<f64>, f64)> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, 0.0..PI)
            .prop_filter("non-zero axis", |(x, y, z, _)| x * x + y * y + z * z > 1e-3)
            .prop_map(|(x, y, z, a)| (Vector3::new(x, y, z), a))
    }

    proptest! {
        #[test]
        fn rotmat_round_trip((axis, angle) in axis_angle()) {
            let r = RotationMatrix::new(axis_angle_oracle(axis, angle)).unwrap();
            let back = quat_to_rotmat(rotmat_to_quat(&r)).unwrap();
            prop_assert!((back.matrix() - r.matrix()).abs().max() < 1e-9);
        }

        #[test]
        fn quat_round_trip_is_canonical(q in unit_quat()) {
            let back = rotmat_to_quat(&quat_to_rotmat(q).unwrap());
            prop_assert!(quat_distance(back, q.canonical()) < 1e-9);
            let c = back.to_array();
            let e = q.canonical().to_array();
            for i in 0..4 { prop_assert!((c[i] - e[i]).abs() < 1e-9); }
        }

        #[test]
        fn double_cover_same_matrix(q in unit_quat()) {
            let a = quat_to_rotmat(q).unwrap();
            let b = quat_to_rotmat(q.neg()).unwrap();
            prop_assert!((a.matrix() - b.matrix()).abs().max() < 1e-15);
        }

        #[test]
        fn distance_symmetric_and_canonical_idempotent(a in unit_quat(), b in unit_quat()) {
            prop_assert_eq!(quat_distance(a, b), quat_distance(b, a));
            prop_assert_eq!(quat_distance(a, a), 0.0);
            prop_assert!(quat_distance(a, b) <= 2.0 + 1e-12);
            prop_assert_eq!(a.canonical().canonical(), a.canonical());
        }

        #[test]
        fn composition_associative(a in axis_angle(), b in axis_angle(), c in axis_angle()) {
            let (ra, rb, rc) = (
                RotationMatrix::from_axis_angle(a.0, a.1).unwrap(),
                RotationMatrix::from_axis_angle(b.0, b.1).unwrap(),
                RotationMatrix::from_axis_angle(c.0, c.1).unwrap(),
            );
            let left = compose_rotation(&compose_rotation(&ra, &rb), &rc);
            let right = compose_rotation(&ra, &compose_rotation(&rb, &rc));
            prop_assert!((left.matrix() - right.matrix()).abs().max() < 1e-9);
        }
    }
}
