//! Harris corner detection.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::frame::{Frame, Image};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarrisConfig {
    pub k: f64,
    /// Gaussian smoothing of the structure tensor.
    pub sigma: f64,
    pub nms_radius: usize,
    /// Responses below this fraction of the frame maximum are dropped.
    pub relative_floor: f64,
    pub absolute_floor: f64,
    /// Pixels this close to the border are never reported.
    pub border: usize,
}

impl Default for HarrisConfig {
    fn default() -> Self {
        HarrisConfig { k: 0.04, sigma: 1.0, nms_radius: 5, relative_floor: 0.01, absolute_floor: 1e-10, border: 2 }
    }
}

/// Per-pixel Harris response `det(M) - k tr(M)^2`.
pub fn harris_response(frame: &Frame, config: &HarrisConfig) -> Image {
    let (gx, gy) = frame.to_image().gradients();
    let (w, h) = (gx.width, gx.height);
    let mut xx = Image::zeros(w, h);
    let mut xy = Image::zeros(w, h);
    let mut yy = Image::zeros(w, h);
    for i in 0..w * h {
        xx.data[i] = gx.data[i] * gx.data[i];
        xy.data[i] = gx.data[i] * gy.data[i];
        yy.data[i] = gy.data[i] * gy.data[i];
    }
    let (xx, xy, yy) = (xx.gaussian_blur(config.sigma), xy.gaussian_blur(config.sigma), yy.gaussian_blur(config.sigma));
    let mut r = Image::zeros(w, h);
    for i in 0..w * h {
        let det = xx.data[i] * yy.data[i] - xy.data[i] * xy.data[i];
        let tr = xx.data[i] + yy.data[i];
        r.data[i] = det - config.k * tr * tr;
    }
    r
}

/// Strongest corners after non-maximum suppression, best first.
pub fn harris_corners(frame: &Frame, max_points: usize, config: &HarrisConfig) -> Vec<Vector2<f64>> {
    let r = harris_response(frame, config);
    let (w, h) = (r.width, r.height);
    let peak = r.data.iter().copied().fold(0.0, f64::max);
    let floor = config.absolute_floor.max(config.relative_floor * peak);
    let rad = config.nms_radius as isize;
    let mut found: Vec<(f64, usize, usize)> = Vec::new();
    let b = config.border;
    for y in b..h.saturating_sub(b) {
        for x in b..w.saturating_sub(b) {
            let v = r.get(x, y);
            if v <= floor {
                continue;
            }
            // Strict maximum, ties broken towards the earlier pixel in raster order.
            let mut is_max = true;
            'scan: for dy in -rad..=rad {
                for dx in -rad..=rad {
                    if dx * dx + dy * dy > rad * rad || (dx == 0 && dy == 0) {
                        continue;
                    }
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let o = r.get(nx as usize, ny as usize);
                    let earlier = (dy, dx) < (0, 0);
                    if o > v || (o == v && earlier) {
                        is_max = false;
                        break 'scan;
                    }
                }
            }
            if is_max {
                found.push((v, y, x));
            }
        }
    }
    found.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    found.into_iter().take(max_points).map(|(_, y, x)| Vector2::new(x as f64, y as f64)).collect()
}
