//! Block-statistics feature extractor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vision::Frame;

pub type FeatureVector = Vec<f64>;

/// Splits a smoothed frame into a `blocks x blocks` grid and reports, per
/// block, the mean intensity followed by the mean absolute horizontal and
/// vertical gradients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureExtractor {
    pub width: usize,
    pub height: usize,
    pub blocks: usize,
    pub smoothing_sigma: f64,
}

impl FeatureExtractor {
    pub fn new(width: usize, height: usize, blocks: usize) -> Result<Self> {
        if blocks == 0 || width % blocks != 0 || height % blocks != 0 {
            return Err(Error::invalid(format!("{blocks} blocks do not tile a {width}x{height} frame")));
        }
        Ok(FeatureExtractor { width, height, blocks, smoothing_sigma: 1.0 })
    }

    pub fn len(&self) -> usize {
        3 * self.blocks * self.blocks
    }

    pub fn is_empty(&self) -> bool {
        self.blocks == 0
    }

    pub fn extract(&self, frame: &Frame) -> Result<FeatureVector> {
        if frame.width() != self.width || frame.height() != self.height {
            return Err(Error::invalid(format!(
                "extractor expects {}x{} frames, got {}x{}",
                self.width,
                self.height,
                frame.width(),
                frame.height()
            )));
        }
        let img = frame.to_image().gaussian_blur(self.smoothing_sigma);
        let (gx, gy) = img.gradients();
        let b = self.blocks;
        let (bw, bh) = (self.width / b, self.height / b);
        let area = (bw * bh) as f64;
        let mut means = Vec::with_capacity(b * b);
        let mut grad_x = Vec::with_capacity(b * b);
        let mut grad_y = Vec::with_capacity(b * b);
        for by in 0..b {
            for bx in 0..b {
                let (mut m, mut sx, mut sy) = (0.0, 0.0, 0.0);
                for y in by * bh..(by + 1) * bh {
                    for x in bx * bw..(bx + 1) * bw {
                        m += img.get(x, y);
                        sx += gx.get(x, y).abs();
                        sy += gy.get(x, y).abs();
                    }
                }
                means.push(m / area);
                grad_x.push(sx / area);
                grad_y.push(sy / area);
            }
        }
        means.extend(grad_x);
        means.extend(grad_y);
        Ok(means)
    }
}
