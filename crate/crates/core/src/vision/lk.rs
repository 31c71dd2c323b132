//! Pyramidal Lucas-Kanade point tracking.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use super::frame::{Frame, Image};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LkConfig {
    /// Odd window side length in pixels.
    pub window: usize,
    pub levels: usize,
    pub max_iterations: usize,
    /// Stop iterating once an update is shorter than this (pixels).
    pub epsilon: f64,
    /// Minimum eigenvalue of the window-averaged structure tensor.
    pub min_eigenvalue: f64,
    /// Maximum mean absolute intensity residual after convergence.
    pub max_residual: f64,
    /// A point is also kept while its residual stays below this multiple of
    /// the median residual of all tracked points, so the gate follows the
    /// noise floor of the frame pair. 0 disables the relative gate.
    pub relative_residual: f64,
}

impl Default for LkConfig {
    fn default() -> Self {
        LkConfig { window: 15, levels: 3, max_iterations: 30, epsilon: 1e-3, min_eigenvalue: 1e-5, max_residual: 0.02, relative_residual: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackStatus {
    Tracked,
    Singular,
    OutOfBounds,
    HighResidual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackedPoint {
    pub from: Vector2<f64>,
    pub to: Vector2<f64>,
    pub status: TrackStatus,
}

impl TrackedPoint {
    pub fn flow(&self) -> Vector2<f64> {
        self.to - self.from
    }

    pub fn accepted(&self) -> bool {
        self.status == TrackStatus::Tracked
    }
}

struct Level {
    a: Image,
    b: Image,
    ax: Image,
    ay: Image,
}

fn pyramid(a: &Frame, b: &Frame, levels: usize) -> Vec<Level> {
    let mut out = Vec::with_capacity(levels);
    let (mut ia, mut ib) = (a.to_image(), b.to_image());
    for l in 0..levels {
        if l > 0 {
            ia = ia.pyr_down();
            ib = ib.pyr_down();
        }
        let (ax, ay) = ia.gradients();
        out.push(Level { a: ia.clone(), b: ib.clone(), ax, ay });
    }
    out
}

/// Tracks `points` from frame A into frame B.
pub fn lucas_kanade(a: &Frame, b: &Frame, points: &[Vector2<f64>], config: &LkConfig) -> Result<Vec<TrackedPoint>> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::invalid("frames must have the same size"));
    }
    if config.window % 2 == 0 || config.window < 3 || config.levels == 0 {
        return Err(Error::invalid("window must be odd and at least 3, levels at least 1"));
    }
    let pyr = pyramid(a, b, config.levels);
    let tracked: Vec<(TrackedPoint, f64)> = points.iter().map(|p| track_one(&pyr, *p, config)).collect();
    let mut residuals: Vec<f64> = tracked.iter().filter(|(t, _)| t.status == TrackStatus::Tracked).map(|(_, r)| *r).collect();
    let limit = if residuals.is_empty() || config.relative_residual <= 0.0 {
        config.max_residual
    } else {
        residuals.sort_by(f64::total_cmp);
        config.max_residual.max(config.relative_residual * residuals[residuals.len() / 2])
    };
    Ok(tracked
        .into_iter()
        .map(|(mut t, r)| {
            if t.status == TrackStatus::Tracked && r > limit {
                t.status = TrackStatus::HighResidual;
            }
            t
        })
        .collect())
}

/// Track plus its mean absolute residual; only bounds and conditioning are judged here.
fn track_one(pyr: &[Level], p: Vector2<f64>, config: &LkConfig) -> (TrackedPoint, f64) {
    let half = (config.window / 2) as isize;
    let n = (config.window * config.window) as f64;
    let mut guess = Vector2::zeros();
    let fail = |status| (TrackedPoint { from: p, to: p, status }, f64::INFINITY);

    for (l, level) in pyr.iter().enumerate().rev() {
        let scale = (1u32 << l) as f64;
        let pl = p / scale;
        // Template samples and gradients at this level.
        let mut tmpl = Vec::with_capacity(config.window * config.window);
        let mut g = Matrix2::zeros();
        for dy in -half..=half {
            for dx in -half..=half {
                let (x, y) = (pl.x + dx as f64, pl.y + dy as f64);
                let (Some(v), Some(ix), Some(iy)) = (level.a.bilinear(x, y), level.ax.bilinear(x, y), level.ay.bilinear(x, y))
                else {
                    if l == 0 {
                        return fail(TrackStatus::OutOfBounds);
                    }
                    continue;
                };
                g += Matrix2::new(ix * ix, ix * iy, ix * iy, iy * iy);
                tmpl.push((dx as f64, dy as f64, v, ix, iy));
            }
        }
        let g_mean = g / n;
        let tr = g_mean.trace();
        let det = g_mean.determinant();
        let min_eig = 0.5 * (tr - (tr * tr - 4.0 * det).max(0.0).sqrt());
        if min_eig < config.min_eigenvalue {
            if l == 0 {
                return fail(TrackStatus::Singular);
            }
            guess *= 2.0;
            continue;
        }
        let g_inv = g.try_inverse().expect("positive-definite structure tensor");
        let mut d = Vector2::zeros();
        let mut lost = false;
        for _ in 0..config.max_iterations {
            let mut rhs = Vector2::zeros();
            for &(dx, dy, v, ix, iy) in &tmpl {
                match level.b.bilinear(pl.x + guess.x + d.x + dx, pl.y + guess.y + d.y + dy) {
                    Some(bv) => rhs += Vector2::new(ix, iy) * (v - bv),
                    None => {
                        lost = true;
                        break;
                    }
                }
            }
            if lost {
                break;
            }
            let step = g_inv * rhs;
            d += step;
            if step.norm() < config.epsilon {
                break;
            }
        }
        if lost {
            if l == 0 {
                return fail(TrackStatus::OutOfBounds);
            }
            guess *= 2.0;
            continue;
        }
        guess += d;
        if l > 0 {
            guess *= 2.0;
        }
    }

    let level = &pyr[0];
    let to = p + guess;
    let mut err = 0.0;
    for dy in -half..=half {
        for dx in -half..=half {
            let (x, y) = (p.x + dx as f64, p.y + dy as f64);
            match (level.a.bilinear(x, y), level.b.bilinear(to.x + dx as f64, to.y + dy as f64)) {
                (Some(va), Some(vb)) => err += (va - vb).abs(),
                _ => return fail(TrackStatus::OutOfBounds),
            }
        }
    }
    (TrackedPoint { from: p, to, status: TrackStatus::Tracked }, err / n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texture(x: f64, y: f64) -> f64 {
        0.5 + 0.2 * (0.31 * x + 0.1 * y).sin() * (0.23 * y - 0.05 * x).cos() + 0.1 * (0.17 * x * 0.9 + 0.41 * y).sin()
    }

    fn shifted(sx: f64, sy: f64) -> Frame {
        Frame::from_fn(96, 96, |x, y| texture(x as f64 - sx, y as f64 - sy)).unwrap()
    }

    fn points() -> Vec<Vector2<f64>> {
        let mut v = Vec::new();
        for y in (30..70).step_by(10) {
            for x in (30..70).step_by(10) {
                v.push(Vector2::new(x as f64, y as f64));
            }
        }
        v
    }

    #[test]
    fn identical_frames_give_zero_flow() {
        let f = shifted(0.0, 0.0);
        for t in lucas_kanade(&f, &f, &points(), &LkConfig::default()).unwrap() {
            assert!(t.accepted());
            assert!(t.flow().norm() < 1e-12);
        }
    }

    #[test]
    fn recovers_integer_shift() {
        let (a, b) = (shifted(0.0, 0.0), shifted(3.0, 0.0));
        for t in lucas_kanade(&a, &b, &points(), &LkConfig::default()).unwrap() {
            assert!(t.accepted(), "{t:?}");
            let f = t.flow();
            assert!((2.9..=3.1).contains(&f.x) && f.y.abs() <= 0.1, "{f:?}");
        }
    }

    #[test]
    fn recovers_fractional_shift_through_the_pyramid() {
        let (a, b) = (shifted(0.0, 0.0), shifted(-4.3, 2.6));
        for t in lucas_kanade(&a, &b, &points(), &LkConfig::default()).unwrap() {
            assert!(t.accepted(), "{t:?}");
            assert!((t.flow() - Vector2::new(-4.3, 2.6)).norm() < 0.2, "{:?}", t.flow());
        }
    }

    #[test]
    fn constant_region_is_singular() {
        let f = Frame::constant(64, 64, 0.4).unwrap();
        let t = lucas_kanade(&f, &f, &[Vector2::new(32.0, 32.0)], &LkConfig::default()).unwrap();
        assert_eq!(t[0].status, TrackStatus::Singular);
    }

    #[test]
    fn mismatched_sizes_are_rejected() {
        let a = Frame::constant(64, 64, 0.4).unwrap();
        let b = Frame::constant(48, 64, 0.4).unwrap();
        assert!(lucas_kanade(&a, &b, &[], &LkConfig::default()).is_err());
    }
}
