//! Synthetic landmark scenes and their pinhole rendering.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::frame::Frame;
use crate::error::{Error, Result};
use crate::geometry::Pose;

/// Fewest landmarks that must project into a frame for it to be rendered.
pub const MIN_VISIBLE_LANDMARKS: usize = 8;
const MIN_DEPTH: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    /// Square pixels with the principal point at the image centre.
    pub fn centered(focal: f64, width: usize, height: usize) -> Result<Self> {
        let k = Intrinsics {
            fx: focal,
            fy: focal,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        let inside = (0.0..self.width as f64).contains(&self.cx) && (0.0..self.height as f64).contains(&self.cy);
        if !inside {
            return Err(Error::invalid("principal point must lie inside the image"));
        }
        Ok(())
    }

    /// Pixel of a camera-frame point, `None` behind the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<Vector2<f64>> {
        (p.z > MIN_DEPTH).then(|| Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Pixel to normalized image coordinates.
    pub fn normalize(&self, px: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy)
    }

    pub fn contains(&self, px: &Vector2<f64>) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x <= (self.width - 1) as f64 && px.y <= (self.height - 1) as f64
    }
}

/// A 3-D point drawn as a small checker patch. The patch adds
/// `offset + amplitude * sgn(u) * sgn(v)` to the background inside its
/// interior texels and nothing on its outer ring, so its footprint is
/// continuous under sub-pixel motion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub position: Vector3<f64>,
    pub offset: f64,
    pub amplitude: f64,
}

impl Landmark {
    fn texel(&self, i: i32, j: i32, radius: i32) -> f64 {
        if i.abs() >= radius || j.abs() >= radius {
            0.0
        } else {
            self.offset + self.amplitude * (i.signum() * j.signum()) as f64
        }
    }

    /// Bilinear interpolation of the texel grid at a continuous offset.
    fn sample(&self, u: f64, v: f64, radius: i32) -> f64 {
        let (i0, j0) = (u.floor() as i32, v.floor() as i32);
        let (fu, fv) = (u - i0 as f64, v - j0 as f64);
        let t = |i, j| self.texel(i, j, radius);
        t(i0, j0) * (1.0 - fu) * (1.0 - fv)
            + t(i0 + 1, j0) * fu * (1.0 - fv)
            + t(i0, j0 + 1) * (1.0 - fu) * fv
            + t(i0 + 1, j0 + 1) * fu * fv
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub intrinsics: Intrinsics,
    pub background: f64,
    /// Half-size of a landmark patch in pixels (texels).
    pub patch_radius: usize,
    pub landmarks: Vec<Landmark>,
}

impl SyntheticScene {
    /// Landmarks whose centre projects inside the image, with their pixels.
    pub fn visible(&self, pose: &Pose) -> Vec<(usize, Vector2<f64>)> {
        let r = pose.rotation();
        self.landmarks
            .iter()
            .enumerate()
            .filter_map(|(i, l)| {
                let pc = r.apply(&(l.position - pose.position));
                self.intrinsics.project(&pc).filter(|px| self.intrinsics.contains(px)).map(|px| (i, px))
            })
            .collect()
    }
}

/// Renders the scene from `pose`. Patches are placed at their exact
/// sub-pixel projections and accumulate additively.
pub fn render(scene: &SyntheticScene, pose: &Pose) -> Result<Frame> {
    let k = &scene.intrinsics;
    let visible = scene.visible(pose);
    if visible.len() < MIN_VISIBLE_LANDMARKS {
        return Err(Error::DegenerateView { visible: visible.len(), required: MIN_VISIBLE_LANDMARKS });
    }
    let (w, h) = (k.width, k.height);
    let mut data = vec![scene.background; w * h];
    let radius = scene.patch_radius as i32;
    let rf = radius as f64;
    for (i, px) in visible {
        let lm = &scene.landmarks[i];
        let x_lo = (px.x - rf).ceil().max(0.0) as usize;
        let x_hi = ((px.x + rf).floor() as usize).min(w - 1);
        let y_lo = (px.y - rf).ceil().max(0.0) as usize;
        let y_hi = ((px.y + rf).floor() as usize).min(h - 1);
        for y in y_lo..=y_hi {
            for x in x_lo..=x_hi {
                data[y * w + x] += lm.sample(x as f64 - px.x, y as f64 - px.y, radius);
            }
        }
    }
    Frame::new(w, h, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Quaternion;

    fn scene_with(landmarks: Vec<Landmark>) -> SyntheticScene {
        SyntheticScene {
            intrinsics: Intrinsics::centered(100.0, 64, 64).unwrap(),
            background: 0.5,
            patch_radius: 3,
            landmarks,
        }
    }

    fn grid_landmarks(depth: f64) -> Vec<Landmark> {
        let mut v = Vec::new();
        for i in -3..=3 {
            for j in -3..=3 {
                v.push(Landmark {
                    position: Vector3::new(0.25 * i as f64, 0.25 * j as f64, depth),
                    offset: 0.1,
                    amplitude: 0.3,
                });
            }
        }
        v
    }

    #[test]
    fn rendering_is_deterministic() {
        let s = scene_with(grid_landmarks(3.0));
        let p = Pose::new(Vector3::new(0.05, -0.02, 0.0), Quaternion::IDENTITY).unwrap();
        assert_eq!(render(&s, &p).unwrap(), render(&s, &p).unwrap());
    }

    #[test]
    fn far_pose_is_degenerate() {
        let s = scene_with(grid_landmarks(3.0));
        let p = Pose::new(Vector3::new(100.0, 0.0, 0.0), Quaternion::IDENTITY).unwrap();
        assert!(matches!(render(&s, &p), Err(Error::DegenerateView { .. })));
    }

    #[test]
    fn axis_landmark_is_centred_on_principal_point() {
        let mut lms = grid_landmarks(50.0);
        lms.push(Landmark { position: Vector3::new(0.0, 0.0, 1.0), offset: 0.2, amplitude: 0.0 });
        let s = scene_with(lms);
        let f = render(&s, &Pose::identity()).unwrap();
        // Weighted centroid of the on-axis patch's contribution.
        let (cx, cy) = (s.intrinsics.cx, s.intrinsics.cy);
        let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
        for y in 27..37 {
            for x in 27..37 {
                let d = Landmark { position: Vector3::zeros(), offset: 0.2, amplitude: 0.0 }
                    .sample(x as f64 - cx, y as f64 - cy, 3);
                sx += d * x as f64;
                sy += d * y as f64;
                sw += d;
            }
        }
        assert!((sx / sw - cx).abs() < 1e-12 && (sy / sw - cy).abs() < 1e-12);
        // The rendered frame carries that patch at the same place.
        assert!(f.get(32, 32) > 0.5 && f.get(31, 31) > 0.5);
    }

    #[test]
    fn subpixel_motion_is_continuous() {
        let s = scene_with(grid_landmarks(3.0));
        let a = render(&s, &Pose::identity()).unwrap();
        let p = Pose::new(Vector3::new(1e-6, 0.0, 0.0), Quaternion::IDENTITY).unwrap();
        let b = render(&s, &p).unwrap();
        let max_diff = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(max_diff < 1e-3);
    }
}
