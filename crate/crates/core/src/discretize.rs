//! Quantile discretization of the seven pose dimensions into interval
//! classes.
//!
//! Boundaries are the `j/K` empirical quantiles of the training values with
//! linear interpolation between order statistics: for sorted values
//! `v[0..n]` and level `p`, `h = (n - 1) p` and
//! `Q(p) = v[floor(h)] + (h - floor(h)) (v[floor(h) + 1] - v[floor(h)])`.
//! Bins are half-open `[b_i, b_{i+1})`; values outside the fitted range are
//! clamped to the first or last class.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose, Trajectory};

/// Number of pose dimensions: `x, y, z, qw, qx, qy, qz`.
pub const POSE_DIMS: usize = 7;
pub const DIM_NAMES: [&str; POSE_DIMS] = ["x", "y", "z", "qw", "qx", "qy", "qz"];
/// Half-width of the single class of a constant dimension.
pub const DEGENERATE_EPSILON: f64 = 1e-6;

/// Half-open real interval `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v < self.hi
    }
}

/// Linear-interpolation empirical quantile of already sorted values.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= sorted.len() {
        sorted[sorted.len() - 1]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

/// Boundaries of one pose dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimGrid {
    pub name: String,
    /// Strictly increasing, one more than the number of classes.
    pub boundaries: Vec<f64>,
    /// All training values were equal; the dimension has one class.
    pub degenerate: bool,
    /// For each of the `K + 1` raw quantile boundaries, the index of the
    /// merged boundary it collapsed onto. Identity when no ties occurred.
    pub merged_from: Vec<usize>,
}

impl DimGrid {
    pub fn classes(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn interval(&self, class: usize) -> Result<Interval> {
        if class >= self.classes() {
            return Err(Error::invalid(format!(
                "class {class} out of range for dimension {} with {} classes",
                self.name,
                self.classes()
            )));
        }
        Ok(Interval::new(self.boundaries[class], self.boundaries[class + 1]))
    }

    pub fn encode(&self, value: f64) -> usize {
        let above = self.boundaries.partition_point(|b| *b <= value);
        above.saturating_sub(1).min(self.classes() - 1)
    }

    fn fit(name: &str, values: &mut [f64], k: usize) -> DimGrid {
        values.sort_by(f64::total_cmp);
        let (first, last) = (values[0], values[values.len() - 1]);
        if first == last {
            return DimGrid {
                name: name.to_string(),
                boundaries: vec![first - DEGENERATE_EPSILON, first + DEGENERATE_EPSILON],
                degenerate: true,
                merged_from: vec![0; k + 1],
            };
        }
        let raw: Vec<f64> = (0..=k).map(|j| quantile_sorted(values, j as f64 / k as f64)).collect();
        let mut boundaries: Vec<f64> = Vec::with_capacity(k + 1);
        let mut merged_from = Vec::with_capacity(k + 1);
        for b in raw {
            if boundaries.last().is_none_or(|last| b > *last) {
                boundaries.push(b);
            }
            merged_from.push(boundaries.len() - 1);
        }
        DimGrid { name: name.to_string(), boundaries, degenerate: false, merged_from }
    }
}

/// Per-dimension class boundaries fitted to a training trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileGrid {
    /// Requested class count; merged dimensions may have fewer.
    pub k: usize,
    pub dims: Vec<DimGrid>,
}

/// Per-dimension class index.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClassLabel(pub Vec<usize>);

impl ClassLabel {
    /// One-hot view of one dimension.
    pub fn one_hot(&self, dim: usize, classes: usize) -> Vec<f64> {
        let mut v = vec![0.0; classes];
        v[self.0[dim]] = 1.0;
        v
    }
}

pub fn fit_grid(training: &Trajectory, k: usize) -> Result<QuantileGrid> {
    let rows: Vec<[f64; POSE_DIMS]> = training.poses().map(Pose::to_vector).collect();
    fit_grid_values(&rows, k)
}

/// Fits a grid to raw 7-vectors.
pub fn fit_grid_values(rows: &[[f64; POSE_DIMS]], k: usize) -> Result<QuantileGrid> {
    if k < 2 {
        return Err(Error::invalid(format!("K must be at least 2, got {k}")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("training poses must be finite"));
    }
    let mut distinct: Vec<&[f64; POSE_DIMS]> = rows.iter().collect();
    distinct.sort_by(|a, b| {
        a.iter().zip(b.iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
    });
    distinct.dedup();
    if distinct.len() < k {
        return Err(Error::invalid(format!(
            "need at least K = {k} distinct training poses, got {}",
            distinct.len()
        )));
    }
    let dims = (0..POSE_DIMS)
        .map(|d| {
            let mut col: Vec<f64> = rows.iter().map(|r| r[d]).collect();
            DimGrid::fit(DIM_NAMES[d], &mut col, k)
        })
        .collect();
    Ok(QuantileGrid { k, dims })
}

impl QuantileGrid {
    pub fn classes_per_dim(&self) -> Vec<usize> {
        self.dims.iter().map(DimGrid::classes).collect()
    }

    pub fn encode_values(&self, v: &[f64; POSE_DIMS]) -> ClassLabel {
        ClassLabel(self.dims.iter().zip(v).map(|(g, x)| g.encode(*x)).collect())
    }

    pub fn encode(&self, pose: &Pose) -> ClassLabel {
        self.encode_values(&pose.to_vector())
    }

    pub fn decode(&self, label: &ClassLabel) -> Result<Vec<Interval>> {
        if label.0.len() != self.dims.len() {
            return Err(Error::invalid("label dimension count does not match grid"));
        }
        self.dims.iter().zip(&label.0).map(|(g, &c)| g.interval(c)).collect()
    }

    /// Interval midpoints of a label.
    pub fn decode_midpoint(&self, label: &ClassLabel) -> Result<[f64; POSE_DIMS]> {
        let iv = self.decode(label)?;
        let mut out = [0.0; POSE_DIMS];
        for (o, i) in out.iter_mut().zip(iv) {
            *o = i.midpoint();
        }
        Ok(out)
    }
}

/// Free-function form of [`QuantileGrid::encode`].
pub fn encode(pose: &Pose, grid: &QuantileGrid) -> ClassLabel {
    grid.encode(pose)
}

/// Free-function form of [`QuantileGrid::decode`].
pub fn decode(label: &ClassLabel, grid: &QuantileGrid) -> Result<Vec<Interval>> {
    grid.decode(label)
}
