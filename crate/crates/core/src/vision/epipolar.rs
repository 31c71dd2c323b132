//! Essential-matrix estimation and its factorization into relative motion.

use nalgebra::{DMatrix, Matrix2, Matrix3, Vector2, Vector3, SVD};
use serde::{Deserialize, Serialize};

use super::scene::Intrinsics;
use crate::error::{Error, Result};
use crate::geometry::RotationMatrix;

pub const MIN_CORRESPONDENCES: usize = 8;
const RANK_TOLERANCE: f64 = 1e-10;
const SINGULAR_VALUE_TOLERANCE: f64 = 1e-6;

/// Matched points between two frames in pixel and normalized coordinates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Correspondences {
    pub pixels0: Vec<Vector2<f64>>,
    pub pixels1: Vec<Vector2<f64>>,
    pub normalized0: Vec<Vector2<f64>>,
    pub normalized1: Vec<Vector2<f64>>,
}

impl Correspondences {
    pub fn from_pixels(k: &Intrinsics, p0: Vec<Vector2<f64>>, p1: Vec<Vector2<f64>>) -> Result<Self> {
        if p0.len() != p1.len() {
            return Err(Error::invalid("correspondence lists differ in length"));
        }
        if p0.iter().chain(&p1).any(|p| !k.contains(p)) {
            return Err(Error::invalid("correspondence lies outside the frame"));
        }
        let normalized0 = p0.iter().map(|p| k.normalize(p)).collect();
        let normalized1 = p1.iter().map(|p| k.normalize(p)).collect();
        Ok(Correspondences { pixels0: p0, pixels1: p1, normalized0, normalized1 })
    }

    /// Pairs known only in normalized coordinates; pixel fields mirror them.
    pub fn from_normalized(x0: Vec<Vector2<f64>>, x1: Vec<Vector2<f64>>) -> Result<Self> {
        if x0.len() != x1.len() {
            return Err(Error::invalid("correspondence lists differ in length"));
        }
        Ok(Correspondences { pixels0: x0.clone(), pixels1: x1.clone(), normalized0: x0, normalized1: x1 })
    }

    pub fn len(&self) -> usize {
        self.normalized0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normalized0.is_empty()
    }

    fn homogeneous(&self, i: usize) -> (Vector3<f64>, Vector3<f64>) {
        let (a, b) = (self.normalized0[i], self.normalized1[i]);
        (Vector3::new(a.x, a.y, 1.0), Vector3::new(b.x, b.y, 1.0))
    }
}

/// Rotation and unit translation with `x1 = R x0 + t` (up to depth scale).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeMotion {
    pub rotation: RotationMatrix,
    pub translation: Vector3<f64>,
}

/// `[t]_x`, the cross-product matrix.
pub fn skew(t: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0)
}

/// Largest `|x1^T E x0|` over the correspondences.
pub fn max_epipolar_residual(e: &Matrix3<f64>, corr: &Correspondences) -> f64 {
    (0..corr.len())
        .map(|i| {
            let (x0, x1) = corr.homogeneous(i);
            (x1.transpose() * e * x0)[0].abs()
        })
        .fold(0.0, f64::max)
}

/// SVD with singular values in descending order.
fn sorted_svd3(m: &Matrix3<f64>) -> (Matrix3<f64>, Vector3<f64>, Matrix3<f64>) {
    let svd = SVD::new(*m, true, true);
    let (u, s, vt) = (svd.u.unwrap(), svd.singular_values, svd.v_t.unwrap());
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let u = Matrix3::from_columns(&[u.column(idx[0]), u.column(idx[1]), u.column(idx[2])]);
    let vt = Matrix3::from_rows(&[vt.row(idx[0]), vt.row(idx[1]), vt.row(idx[2])]);
    (u, Vector3::new(s[idx[0]], s[idx[1]], s[idx[2]]), vt)
}

/// Similarity taking the points to zero mean and mean distance sqrt(2).
fn hartley(points: &[Vector2<f64>]) -> Result<Matrix3<f64>> {
    let n = points.len() as f64;
    let c = points.iter().fold(Vector2::zeros(), |a, p| a + p) / n;
    let mean_dist = points.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    if mean_dist < 1e-12 {
        return Err(Error::DegenerateConfiguration("all points coincide".into()));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok(Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0))
}

fn project_rank2(m: &Matrix3<f64>) -> Matrix3<f64> {
    let (u, s, vt) = sorted_svd3(m);
    u * Matrix3::from_diagonal(&Vector3::new(s[0], s[1], 0.0)) * vt
}

fn project_essential(m: &Matrix3<f64>) -> Matrix3<f64> {
    let (u, s, vt) = sorted_svd3(m);
    let avg = 0.5 * (s[0] + s[1]);
    u * Matrix3::from_diagonal(&Vector3::new(avg, avg, 0.0)) * vt
}

/// Normalized eight-point estimate, scaled to unit Frobenius norm.
pub fn estimate_essential(corr: &Correspondences) -> Result<Matrix3<f64>> {
    let n = corr.len();
    if n < MIN_CORRESPONDENCES {
        return Err(Error::invalid(format!("need at least {MIN_CORRESPONDENCES} correspondences, got {n}")));
    }
    let t0 = hartley(&corr.normalized0)?;
    let t1 = hartley(&corr.normalized1)?;
    let rows = n.max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for i in 0..n {
        let (x0, x1) = corr.homogeneous(i);
        let (p, q) = (t0 * x0, t1 * x1);
        let row = [q.x * p.x, q.x * p.y, q.x, q.y * p.x, q.y * p.y, q.y, p.x, p.y, 1.0];
        for (j, v) in row.iter().enumerate() {
            a[(i, j)] = *v;
        }
    }
    let svd = SVD::new(a, false, true);
    let vt = svd.v_t.expect("requested V^T");
    let s = &svd.singular_values;
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&x, &y| s[y].total_cmp(&s[x]));
    if s[order[7]] <= RANK_TOLERANCE * s[order[0]] {
        return Err(Error::DegenerateConfiguration("design matrix has rank below 8".into()));
    }
    let v = vt.row(order[8]);
    let en = Matrix3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]);
    let e = t1.transpose() * project_rank2(&en) * t0;
    let e = project_essential(&e);
    let e = e / e.norm();
    Ok(canonical_sign(e))
}

/// Fixes the overall sign so that the largest-magnitude entry is positive.
fn canonical_sign(e: Matrix3<f64>) -> Matrix3<f64> {
    let big = e.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
    if big < 0.0 {
        -e
    } else {
        e
    }
}

/// Depths `(d0, d1)` with `d1 x1 = R d0 x0 + t`, by least squares.
fn triangulate_depths(r: &Matrix3<f64>, t: &Vector3<f64>, x0: &Vector3<f64>, x1: &Vector3<f64>) -> Option<(f64, f64)> {
    let a = r * x0;
    let b = -x1;
    let m = Matrix2::new(a.dot(&a), a.dot(&b), a.dot(&b), b.dot(&b));
    let rhs = Vector2::new(-a.dot(t), -b.dot(t));
    if m.determinant().abs() < 1e-14 * m.norm_squared() {
        return None;
    }
    let d = m.try_inverse()? * rhs;
    Some((d.x, d.y))
}

/// Picks the SVD factorization that puts the most points in front of both cameras.
pub fn decompose_essential(e: &Matrix3<f64>, corr: &Correspondences) -> Result<RelativeMotion> {
    if corr.is_empty() {
        return Err(Error::invalid("need at least one correspondence to resolve the decomposition"));
    }
    let (mut u, s, vt) = sorted_svd3(e);
    if s[0] <= 0.0 || (s[0] - s[1]).abs() > SINGULAR_VALUE_TOLERANCE * s[0] || s[2] > SINGULAR_VALUE_TOLERANCE * s[0] {
        return Err(Error::invalid(format!("not an essential matrix: singular values {s:?}")));
    }
    let mut v = vt.transpose();
    if u.determinant() < 0.0 {
        u = -u;
    }
    if v.determinant() < 0.0 {
        v = -v;
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = u * w * v.transpose();
    let r2 = u * w.transpose() * v.transpose();
    let t: Vector3<f64> = u.column(2).into();
    let candidates = [(r1, t), (r1, -t), (r2, t), (r2, -t)];
    let counts: Vec<usize> = candidates
        .iter()
        .map(|(r, t)| {
            (0..corr.len())
                .filter(|&i| {
                    let (x0, x1) = corr.homogeneous(i);
                    matches!(triangulate_depths(r, t, &x0, &x1), Some((d0, d1)) if d0 > 0.0 && d1 > 0.0)
                })
                .count()
        })
        .collect();
    let best = *counts.iter().max().unwrap();
    if counts.iter().filter(|&&c| c == best).count() > 1 {
        return Err(Error::AmbiguousDecomposition(format!("cheirality counts {counts:?}")));
    }
    let i = counts.iter().position(|&c| c == best).unwrap();
    let (r, t) = candidates[i];
    Ok(RelativeMotion { rotation: RotationMatrix::project(r)?, translation: t.normalize() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Projects random points seen by both cameras under `x1 = R x0 + t`.
    fn synth(r: &Matrix3<f64>, t: &Vector3<f64>, n: usize, seed: u64) -> Correspondences {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut a, mut b) = (Vec::new(), Vec::new());
        while a.len() < n {
            let p = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(3.0..6.0));
            let q = r * p + t;
            if q.z > 0.5 {
                a.push(Vector2::new(p.x / p.z, p.y / p.z));
                b.push(Vector2::new(q.x / q.z, q.y / q.z));
            }
        }
        Correspondences::from_normalized(a, b).unwrap()
    }

    fn rot(axis: [f64; 3], angle: f64) -> Matrix3<f64> {
        *RotationMatrix::from_axis_angle(Vector3::from(axis), angle).unwrap().matrix()
    }

    #[test]
    fn pure_x_translation_gives_skew_matrix() {
        let t = Vector3::new(1.0, 0.0, 0.0);
        let corr = synth(&Matrix3::identity(), &t, 20, 1);
        let e = estimate_essential(&corr).unwrap();
        let expected = skew(&t) / skew(&t).norm();
        let diff = (e - expected).norm().min((e + expected).norm());
        assert!(diff < 1e-9, "{e}");
        let m = decompose_essential(&e, &corr).unwrap();
        assert!(m.rotation.angle_to(&RotationMatrix::identity()) < 1e-6);
        assert!((m.translation - t).norm() < 1e-9);
    }

    #[test]
    fn backwards_motion_resolves_the_sign() {
        let t = Vector3::new(-1.0, 0.0, 0.0);
        let corr = synth(&Matrix3::identity(), &t, 20, 2);
        let m = decompose_essential(&skew(&t), &corr).unwrap();
        assert!((m.translation - t).norm() < 1e-9);
    }

    #[test]
    fn noiseless_residuals_are_tiny() {
        let r = rot([0.3, -1.0, 0.2], 0.2);
        let t = Vector3::new(0.4, 0.1, -0.2);
        let corr = synth(&r, &t, 20, 3);
        let e = estimate_essential(&corr).unwrap();
        assert!(max_epipolar_residual(&e, &corr) < 1e-9);
    }

    #[test]
    fn too_few_or_identical_points_are_rejected() {
        let corr = synth(&Matrix3::identity(), &Vector3::x(), 7, 4);
        assert!(matches!(estimate_essential(&corr), Err(Error::InvalidInput(_))));
        let p = vec![Vector2::new(0.1, 0.2); 10];
        let same = Correspondences::from_normalized(p.clone(), p).unwrap();
        assert!(matches!(estimate_essential(&same), Err(Error::DegenerateConfiguration(_))));
    }

    #[test]
    fn scaling_e_does_not_change_the_motion() {
        let r = rot([0.0, 1.0, 0.0], 0.1);
        let t = Vector3::new(0.2, 0.0, 1.0).normalize();
        let corr = synth(&r, &t, 15, 5);
        let e = skew(&t) * r;
        let a = decompose_essential(&e, &corr).unwrap();
        let b = decompose_essential(&(5.0 * e), &corr).unwrap();
        assert!(a.rotation.angle_to(&b.rotation) < 1e-12);
        assert!((a.translation - b.translation).norm() < 1e-12);
    }

    #[test]
    fn non_essential_matrix_is_rejected() {
        let corr = synth(&Matrix3::identity(), &Vector3::x(), 10, 6);
        assert!(decompose_essential(&Matrix3::identity(), &corr).is_err());
    }

    #[test]
    fn pixel_correspondences_outside_the_frame_are_rejected() {
        let k = Intrinsics::centered(100.0, 64, 64).unwrap();
        let r = Correspondences::from_pixels(&k, vec![Vector2::new(70.0, 3.0)], vec![Vector2::new(3.0, 3.0)]);
        assert!(r.is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn random_motion_is_recovered(
            ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in -1.0f64..1.0,
            angle in 0.0f64..0.5,
            tx in -1.0f64..1.0, ty in -1.0f64..1.0, tz in -1.0f64..1.0,
            seed in 0u64..1000,
        ) {
            let axis = Vector3::new(ax, ay, az);
            let t = Vector3::new(tx, ty, tz);
            prop_assume!(axis.norm() > 0.1 && t.norm() > 0.2);
            let r = rot([ax, ay, az], angle);
            let t = t.normalize() * 0.5;
            let corr = synth(&r, &t, 30, seed);
            let e = estimate_essential(&corr).unwrap();
            prop_assert!(max_epipolar_residual(&e, &corr) < 1e-6);
            let m = decompose_essential(&e, &corr).unwrap();
            let truth = RotationMatrix::new(r).unwrap();
            prop_assert!(m.rotation.angle_to(&truth) < 1e-6);
            prop_assert!((m.translation.norm() - 1.0).abs() < 1e-9);
            prop_assert!(m.translation.dot(&t.normalize()).abs() > 1.0 - 1e-9);
            // The recovered factors reproduce a valid essential matrix.
            let e_hat = skew(&m.translation) * m.rotation.matrix();
            prop_assert!(max_epipolar_residual(&e_hat, &corr) < 1e-6);
        }
    }
}
