//! Grayscale frames and the handful of image operations the detectors need.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub const MIN_FRAME_SIZE: usize = 32;

/// Row-major grayscale image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Frame {
    /// Builds a frame, clamping values into `[0, 1]`.
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width < MIN_FRAME_SIZE || height < MIN_FRAME_SIZE {
            return Err(Error::invalid(format!(
                "frame must be at least {MIN_FRAME_SIZE}x{MIN_FRAME_SIZE}, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::invalid("frame data length does not match its dimensions"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("frame values must be finite"));
        }
        let data = data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(Frame { width, height, data })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Frame::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Frame::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Adds i.i.d. Gaussian noise and clamps back into `[0, 1]`.
    pub fn with_noise<R: Rng + ?Sized>(&self, sigma: f64, rng: &mut R) -> Self {
        if sigma <= 0.0 {
            return self.clone();
        }
        let normal = Normal::new(0.0, sigma).expect("sigma is positive");
        let data = self.data.iter().map(|v| (v + normal.sample(rng)).clamp(0.0, 1.0)).collect();
        Frame { width: self.width, height: self.height, data }
    }

    pub fn to_image(&self) -> Image {
        Image { width: self.width, height: self.height, data: self.data.clone() }
    }

    /// Binary PGM (`P5`, 8-bit).
    pub fn write_pgm<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.data.iter().map(|v| (v * 255.0).round() as u8).collect();
        out.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_pgm<R: Read>(mut input: R) -> Result<Self> {
        let mut buf = Vec::new();
        input.read_to_end(&mut buf)?;
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < buf.len() && buf[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < buf.len() && buf[pos] == b'#' {
                while pos < buf.len() && buf[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < buf.len() && !buf[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::invalid("truncated PGM header"));
            }
            fields.push(String::from_utf8_lossy(&buf[start..pos]).into_owned());
        }
        pos += 1;
        if fields[0] != "P5" || fields[3] != "255" {
            return Err(Error::invalid("only 8-bit binary PGM (P5, maxval 255) is supported"));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::invalid("bad PGM dimension"));
        let (w, h) = (parse(&fields[1])?, parse(&fields[2])?);
        let pixels = buf.get(pos..pos + w * h).ok_or_else(|| Error::invalid("truncated PGM data"))?;
        Frame::new(w, h, pixels.iter().map(|&b| b as f64 / 255.0).collect())
    }
}

/// Unclamped working image used for gradients, responses and pyramids.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(width: usize, height: usize) -> Self {
        Image { width, height, data: vec![0.0; width * height] }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Border-clamped access.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y)
    }

    /// Bilinear interpolation; `None` outside the pixel-centre hull.
    #[inline]
    pub fn bilinear(&self, x: f64, y: f64) -> Option<f64> {
        if !(x >= 0.0 && y >= 0.0) || x > (self.width - 1) as f64 || y > (self.height - 1) as f64 {
            return None;
        }
        let x0 = (x.floor() as usize).min(self.width - 2);
        let y0 = (y.floor() as usize).min(self.height - 2);
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let a = self.get(x0, y0);
        let b = self.get(x0 + 1, y0);
        let c = self.get(x0, y0 + 1);
        let d = self.get(x0 + 1, y0 + 1);
        Some(a * (1.0 - fx) * (1.0 - fy) + b * fx * (1.0 - fy) + c * (1.0 - fx) * fy + d * fx * fy)
    }

    /// Separable Gaussian blur with border clamping; kernel radius `ceil(3 sigma)`.
    pub fn gaussian_blur(&self, sigma: f64) -> Image {
        let kernel = gaussian_kernel(sigma);
        let r = (kernel.len() / 2) as isize;
        let mut tmp = Image::zeros(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let mut acc = 0.0;
                for (i, k) in kernel.iter().enumerate() {
                    acc += k * self.get_clamped(x as isize + i as isize - r, y as isize);
                }
                tmp.set(x, y, acc);
            }
        }
        let mut out = Image::zeros(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let mut acc = 0.0;
                for (i, k) in kernel.iter().enumerate() {
                    acc += k * tmp.get_clamped(x as isize, y as isize + i as isize - r);
                }
                out.set(x, y, acc);
            }
        }
        out
    }

    /// Central-difference gradients with border clamping.
    pub fn gradients(&self) -> (Image, Image) {
        let mut gx = Image::zeros(self.width, self.height);
        let mut gy = Image::zeros(self.width, self.height);
        for y in 0..self.height as isize {
            for x in 0..self.width as isize {
                let dx = 0.5 * (self.get_clamped(x + 1, y) - self.get_clamped(x - 1, y));
                let dy = 0.5 * (self.get_clamped(x, y + 1) - self.get_clamped(x, y - 1));
                gx.set(x as usize, y as usize, dx);
                gy.set(x as usize, y as usize, dy);
            }
        }
        (gx, gy)
    }

    /// Blur with a `[1 4 6 4 1]/16` kernel, then keep every second pixel.
    pub fn pyr_down(&self) -> Image {
        const K: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
        let (w, h) = (self.width.div_ceil(2), self.height.div_ceil(2));
        let mut tmp = Image::zeros(self.width, h);
        for y in 0..h {
            for x in 0..self.width {
                let mut acc = 0.0;
                for (i, k) in K.iter().enumerate() {
                    acc += k * self.get_clamped(x as isize, 2 * y as isize + i as isize - 2);
                }
                tmp.set(x, y, acc);
            }
        }
        let mut out = Image::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (i, k) in K.iter().enumerate() {
                    acc += k * tmp.get_clamped(2 * x as isize + i as isize - 2, y as isize);
                }
                out.set(x, y, acc);
            }
        }
        out
    }
}

/// Normalized 1-D Gaussian kernel of radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_small_or_mismatched_frames() {
        assert!(Frame::constant(16, 64, 0.0).is_err());
        assert!(Frame::new(32, 32, vec![0.0; 10]).is_err());
        assert!(Frame::new(32, 32, vec![f64::NAN; 1024]).is_err());
    }

    #[test]
    fn values_are_clamped() {
        let f = Frame::from_fn(32, 32, |x, _| x as f64 - 10.0).unwrap();
        assert!(f.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn pgm_round_trip_at_8_bit_precision() {
        let f = Frame::from_fn(40, 33, |x, y| ((x * 7 + y * 3) % 256) as f64 / 255.0).unwrap();
        let mut buf = Vec::new();
        f.write_pgm(&mut buf).unwrap();
        assert!(buf.starts_with(b"P5\n40 33\n255\n"));
        let g = Frame::read_pgm(&buf[..]).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn noise_is_seeded_and_clamped() {
        let f = Frame::constant(32, 32, 0.5).unwrap();
        let a = f.with_noise(0.2, &mut ChaCha8Rng::seed_from_u64(3));
        let b = f.with_noise(0.2, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(f.with_noise(0.0, &mut ChaCha8Rng::seed_from_u64(3)), f);
    }

    #[test]
    fn blur_preserves_constants_and_kernel_sums_to_one() {
        let k = gaussian_kernel(1.0);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let img = Frame::constant(32, 32, 0.25).unwrap().to_image().gaussian_blur(1.0);
        assert!(img.data.iter().all(|v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn bilinear_matches_linear_ramp() {
        let img = Frame::from_fn(32, 32, |x, y| (x as f64 + 2.0 * y as f64) / 100.0).unwrap().to_image();
        let v = img.bilinear(3.25, 4.5).unwrap();
        assert!((v - (3.25 + 9.0) / 100.0).abs() < 1e-12);
        assert!(img.bilinear(-0.1, 3.0).is_none());
        assert!(img.bilinear(31.0, 31.0).is_some());
    }
}
