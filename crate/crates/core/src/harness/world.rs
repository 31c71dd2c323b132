//! Synthetic worlds: a landmark field under a looping camera path.
//!
//! The camera looks along world +z at landmarks lying between two depths
//! and flies a stadium-shaped loop in the x-y plane several times. With the
//! symmetric layout the landmark field repeats with period `loop_height`
//! along y, so the two straights of the loop see identical images while
//! the half circles at either end stay unique.

use std::f64::consts::TAU;
use std::ops::Range;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose, Quaternion, Trajectory};
use crate::vision::{render, Frame, Intrinsics, Landmark, SyntheticScene};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub image_size: usize,
    pub focal: f64,
    /// Extent of the loop along x (metres).
    pub loop_width: f64,
    /// Extent of the loop along y; also the repeat period of the symmetric layout.
    pub loop_height: f64,
    pub laps: usize,
    /// Amplitude of the y undulation of the two straights (metres).
    pub wave: f64,
    /// Slope of the straights: the loop is sheared by `y += shear * x`.
    pub shear: f64,
    /// Landmarks per square metre.
    pub density: f64,
    pub depth_min: f64,
    pub depth_max: f64,
    pub symmetric: bool,
    /// Per-lap uniform offset bound in x and y (metres).
    pub lap_jitter: f64,
    /// Amplitude of the camera height variation (metres).
    pub height_wobble: f64,
    /// Amplitude of the attitude variation (radians).
    pub attitude_wobble: f64,
    pub patch_radius: usize,
    pub min_visible: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            image_size: 128,
            focal: 60.0,
            loop_width: 6.0,
            loop_height: 4.0,
            laps: 5,
            wave: 0.0,
            shear: 0.6,
            density: 2.0,
            depth_min: 3.0,
            depth_max: 5.0,
            symmetric: true,
            lap_jitter: 0.1,
            height_wobble: 0.0,
            attitude_wobble: 0.05,
            patch_radius: 3,
            min_visible: 50,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self, frames: usize) -> Result<()> {
        let positive = [self.focal, self.loop_width, self.loop_height, self.density, self.depth_min];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) || self.depth_max <= self.depth_min {
            return Err(Error::invalid("world dimensions, density and depths must be positive and ordered"));
        }
        if self.laps == 0 || frames < self.laps * 4 {
            return Err(Error::invalid("need at least one lap and four frames per lap"));
        }
        if self.lap_jitter < 0.0 || self.height_wobble < 0.0 || self.attitude_wobble < 0.0 {
            return Err(Error::invalid("jitter and wobble amplitudes must be non-negative"));
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Result<Intrinsics> {
        Intrinsics::centered(self.focal, self.image_size, self.image_size)
    }
}

/// Contiguous train / calibration / test blocks of frame positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Range<usize>,
    pub calibration: Range<usize>,
    pub test: Range<usize>,
}

impl Splits {
    /// 60 / 20 / 20 blocks.
    pub fn contiguous(n: usize) -> Self {
        let train = n * 3 / 5;
        let calibration = n / 5;
        Splits { train: 0..train, calibration: train..train + calibration, test: train + calibration..n }
    }

    pub fn is_disjoint_cover(&self, n: usize) -> bool {
        self.train.start == 0
            && self.train.end == self.calibration.start
            && self.calibration.end == self.test.start
            && self.test.end == n
            && !self.train.is_empty()
            && !self.calibration.is_empty()
            && !self.test.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub scene: SyntheticScene,
    pub trajectory: Trajectory,
    pub splits: Splits,
}

impl World {
    pub fn render_range(&self, range: Range<usize>) -> Result<Vec<Frame>> {
        self.trajectory.points()[range].iter().map(|p| render(&self.scene, &p.pose)).collect()
    }

    pub fn render_all(&self) -> Result<Vec<Frame>> {
        self.render_range(0..self.trajectory.len())
    }
}

/// Closed Catmull-Rom curve through waypoints, sampled by arc length.
struct LoopPath {
    samples: Vec<Vector2<f64>>,
    cumulative: Vec<f64>,
}

impl LoopPath {
    /// Stadium: two wavy straights joined by half circles. The top straight
    /// is the bottom one shifted by `height`, so its y profile repeats.
    /// Every waypoint is then sheared by `y += shear * x`.
    fn stadium(width: f64, height: f64, wave: f64, shear: f64) -> Self {
        let r = height / 2.0;
        let profile = |x: f64| wave * (TAU * x / (width / 2.0)).sin();
        let mut way = Vec::new();
        let pieces = width.ceil() as usize;
        for j in 0..pieces {
            let x = width * j as f64 / pieces as f64;
            way.push(Vector2::new(x, profile(x)));
        }
        let arc = 6;
        for j in 0..arc {
            let a = std::f64::consts::PI * j as f64 / arc as f64;
            way.push(Vector2::new(width + r * a.sin(), r - r * a.cos()));
        }
        for j in 0..pieces {
            let x = width * (1.0 - j as f64 / pieces as f64);
            way.push(Vector2::new(x, height + profile(x)));
        }
        for j in 0..arc {
            let a = std::f64::consts::PI * j as f64 / arc as f64;
            way.push(Vector2::new(-r * a.sin(), r + r * a.cos()));
        }
        for p in &mut way {
            p.y += shear * p.x;
        }
        Self::through(&way)
    }

    /// Axis-aligned bounds of the sampled curve.
    fn bounds(&self) -> (Vector2<f64>, Vector2<f64>) {
        let lo = self.samples.iter().fold(Vector2::repeat(f64::INFINITY), |a, p| a.inf(p));
        let hi = self.samples.iter().fold(Vector2::repeat(f64::NEG_INFINITY), |a, p| a.sup(p));
        (lo, hi)
    }

    fn through(way: &[Vector2<f64>]) -> Self {
        let n = way.len();
        let mut samples = Vec::new();
        for i in 0..n {
            let (p0, p1, p2, p3) = (way[(i + n - 1) % n], way[i], way[(i + 1) % n], way[(i + 2) % n]);
            for s in 0..40 {
                let t = s as f64 / 40.0;
                let (t2, t3) = (t * t, t * t * t);
                samples.push(
                    (p1 * 2.0 + (p2 - p0) * t + (p0 * 2.0 - p1 * 5.0 + p2 * 4.0 - p3) * t2 + (p1 * 3.0 - p0 - p2 * 3.0 + p3) * t3) * 0.5,
                );
            }
        }
        samples.push(samples[0]);
        let mut cumulative = vec![0.0];
        for w in samples.windows(2) {
            cumulative.push(cumulative.last().unwrap() + (w[1] - w[0]).norm());
        }
        LoopPath { samples, cumulative }
    }

    /// Arc length at the sample with the smallest x.
    fn apex_left(&self) -> f64 {
        let i = (0..self.samples.len()).min_by(|&a, &b| self.samples[a].x.total_cmp(&self.samples[b].x)).unwrap();
        self.cumulative[i]
    }

    fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    fn at(&self, s: f64) -> Vector2<f64> {
        let s = s.rem_euclid(self.length());
        let i = self.cumulative.partition_point(|&c| c <= s).clamp(1, self.samples.len() - 1);
        let (c0, c1) = (self.cumulative[i - 1], self.cumulative[i]);
        let f = if c1 > c0 { (s - c0) / (c1 - c0) } else { 0.0 };
        self.samples[i - 1] + (self.samples[i] - self.samples[i - 1]) * f
    }
}

/// Camera height and attitude as functions of position, periodic in y with
/// the loop height so duplicated places also share their attitude.
fn attitude(cfg: &WorldConfig, p: Vector2<f64>) -> (f64, Quaternion) {
    let phase_y = TAU * p.y / cfg.loop_height;
    let z = cfg.height_wobble * ((TAU * p.x / 7.3).sin() * 0.7 + 0.3 * phase_y.cos());
    let a = cfg.attitude_wobble;
    let rv = Vector3::new(
        a * (TAU * p.x / 9.1 + phase_y).sin(),
        a * 0.8 * (TAU * p.x / 6.7).cos(),
        a * 1.5 * (TAU * p.x / 11.3 - phase_y).sin(),
    );
    let angle = rv.norm();
    let q = if angle > 0.0 { Quaternion::from_axis_angle(rv / angle, angle).expect("unit axis") } else { Quaternion::IDENTITY };
    (z, q)
}

fn random_landmark(rng: &mut ChaCha8Rng, x: f64, y: f64, cfg: &WorldConfig) -> Landmark {
    let depth = rng.random_range(cfg.depth_min..cfg.depth_max);
    let offset = rng.random_range(-0.2..0.2);
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    Landmark { position: Vector3::new(x, y, depth), offset, amplitude: sign * rng.random_range(0.15..0.3) }
}

/// Landmark field covering every camera footprint of the loop.
fn landmarks(cfg: &WorldConfig, path: &LoopPath, rng: &mut ChaCha8Rng) -> Vec<Landmark> {
    let reach = cfg.depth_max * (cfg.image_size as f64 / 2.0) / cfg.focal + cfg.lap_jitter + 1.0;
    let (lo, hi) = path.bounds();
    let (x0, x1) = (lo.x - reach, hi.x + reach);
    let (y0, y1) = (lo.y - reach, hi.y + reach);
    let mut out = Vec::new();
    let scatter = |rng: &mut ChaCha8Rng, xa: f64, xb: f64, ya: f64, yb: f64, out: &mut Vec<Landmark>| {
        let n = ((xb - xa) * (yb - ya) * cfg.density).round() as usize;
        for _ in 0..n {
            let (x, y) = (rng.random_range(xa..xb), rng.random_range(ya..yb));
            out.push(random_landmark(rng, x, y, cfg));
        }
    };
    if !cfg.symmetric {
        scatter(rng, x0, x1, y0, y1, &mut out);
        return out;
    }
    // One period of the field, copied along y.
    let mut tile = Vec::new();
    scatter(rng, x0, x1, 0.0, cfg.loop_height, &mut tile);
    let copies = ((y1 - y0) / cfg.loop_height).ceil() as i32 + 1;
    for m in -copies..=copies {
        for l in &tile {
            let y = l.position.y + m as f64 * cfg.loop_height;
            if (y0..y1).contains(&y) {
                out.push(Landmark { position: Vector3::new(l.position.x, y, l.position.z), ..*l });
            }
        }
    }
    out
}

/// Scene, ground-truth trajectory and splits for `frames` frames.
pub fn generate_world(cfg: &WorldConfig, frames: usize, seed: u64) -> Result<World> {
    cfg.validate(frames)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let path = LoopPath::stadium(cfg.loop_width, cfg.loop_height, cfg.wave, cfg.shear);
    let scene = SyntheticScene {
        intrinsics: cfg.intrinsics()?,
        background: 0.5,
        patch_radius: cfg.patch_radius,
        landmarks: landmarks(cfg, &path, &mut rng),
    };
    let len = path.length();
    // Start at the apex of the left half circle, which has no duplicate.
    let start = path.apex_left();
    let per_lap = frames.div_ceil(cfg.laps);
    let mut poses = Vec::with_capacity(frames);
    let mut lap_offset = (Vector2::zeros(), 0.0);
    for i in 0..frames {
        let (lap, j) = (i / per_lap, i % per_lap);
        if j == 0 {
            let d = Vector2::new(rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)) * cfg.lap_jitter;
            lap_offset = (d, if lap == 0 { 0.0 } else { rng.random_range(0.0..1.0) });
        }
        let s = start + (j as f64 + lap_offset.1) / per_lap as f64 * len;
        let p = path.at(s) + lap_offset.0;
        let (z, q) = attitude(cfg, p);
        poses.push(Pose::new(Vector3::new(p.x, p.y, z), q)?);
    }
    for (i, p) in poses.iter().enumerate() {
        let visible = scene.visible(p).len();
        if visible < cfg.min_visible {
            return Err(Error::Generation(format!("frame {i} sees {visible} landmarks, need {}", cfg.min_visible)));
        }
    }
    let splits = Splits::contiguous(frames);
    Ok(World { scene, trajectory: Trajectory::from_poses(poses), splits })
}

/// Poses drawn independently and uniformly along the loop, with the lap
/// jitter and attitude of [`generate_world`]. These are exchangeable, unlike
/// consecutive trajectory frames.
pub fn sample_poses(cfg: &WorldConfig, count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Pose>> {
    let path = LoopPath::stadium(cfg.loop_width, cfg.loop_height, cfg.wave, cfg.shear);
    (0..count)
        .map(|_| {
            let s = rng.random_range(0.0..path.length());
            let d = Vector2::new(rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)) * cfg.lap_jitter;
            let p = path.at(s) + d;
            let (z, q) = attitude(cfg, p);
            Pose::new(Vector3::new(p.x, p.y, z), q)
        })
        .collect()
}
