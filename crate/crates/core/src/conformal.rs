//! Split-conformal calibration, per-head prediction sets and their
//! interval/cuboid regions.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::classifier::{FeatureVector, MultiHeadModel};
use crate::discretize::{ClassLabel, Interval, QuantileGrid};
use crate::error::{Error, Result};

/// Rank `ceil((n + 1)(1 - alpha))` of the order statistic used as the
/// threshold. A tiny slack keeps exact products such as `20 * 0.9` from
/// rounding up.
pub fn quantile_rank(n: usize, alpha: f64) -> usize {
    ((n as f64 + 1.0) * (1.0 - alpha) - 1e-9).ceil().max(1.0) as usize
}

/// The `quantile_rank`-th smallest score, or 1 when that rank exceeds `n`.
pub fn conformal_quantile(scores: &[f64], alpha: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::invalid("empty calibration set"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
        return Err(Error::invalid("conformal scores must lie in [0, 1]"));
    }
    let k = quantile_rank(scores.len(), alpha);
    if k > scores.len() {
        return Ok(1.0);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[k - 1].clamp(0.0, 1.0))
}

/// Calibration scores per head (`1 - p(true class)`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub alpha: f64,
    pub n: usize,
    pub scores: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedModel {
    pub model: MultiHeadModel,
    pub grid: QuantileGrid,
    pub alpha: f64,
    /// Threshold per head; `None` for heads excluded from calibration
    /// (single-class dimensions), which always emit their one class.
    pub qhat: Vec<Option<f64>>,
    pub calibration_size: usize,
}

/// Heads that carry no uncertainty: a one-class grid dimension or a head
/// trained on a single class.
fn fixed_class(model: &MultiHeadModel, head: usize) -> Option<usize> {
    if model.head_classes[head] == 1 {
        Some(0)
    } else {
        model.constant_heads[head]
    }
}

pub fn calibration_scores(model: &MultiHeadModel, features: &[FeatureVector], labels: &[ClassLabel]) -> Result<Vec<Vec<f64>>> {
    if features.len() != labels.len() {
        return Err(Error::invalid("calibration features and labels differ in length"));
    }
    let probs = model.predict_batch(features)?;
    let mut scores = vec![Vec::with_capacity(features.len()); model.heads()];
    for (p, l) in probs.iter().zip(labels) {
        for (h, s) in scores.iter_mut().enumerate() {
            s.push((1.0 - p[h][l.0[h]]).clamp(0.0, 1.0));
        }
    }
    Ok(scores)
}

pub fn calibrate(
    model: MultiHeadModel,
    grid: QuantileGrid,
    features: &[FeatureVector],
    labels: &[ClassLabel],
    alpha: f64,
) -> Result<CalibratedModel> {
    if features.is_empty() {
        return Err(Error::invalid("empty calibration set"));
    }
    if grid.classes_per_dim() != model.head_classes {
        return Err(Error::invalid("grid and model disagree on the class layout"));
    }
    let scores = calibration_scores(&model, features, labels)?;
    let qhat = (0..model.heads())
        .map(|h| match fixed_class(&model, h) {
            Some(_) => Ok(None),
            None => conformal_quantile(&scores[h], alpha).map(Some),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CalibratedModel { model, grid, alpha, qhat, calibration_size: features.len() })
}

/// Classes kept by one head, with the softmax vector they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub classes: Vec<Vec<usize>>,
    pub scores: Vec<Vec<f64>>,
    /// The threshold admitted nothing and the argmax class was used instead.
    pub fallback: Vec<bool>,
}

impl PredictionSet {
    pub fn mean_size(&self) -> f64 {
        self.classes.iter().map(Vec::len).sum::<usize>() as f64 / self.classes.len() as f64
    }

    pub fn any_fallback(&self) -> bool {
        self.fallback.iter().any(|f| *f)
    }

    pub fn contains(&self, label: &ClassLabel) -> Vec<bool> {
        self.classes.iter().zip(&label.0).map(|(c, l)| c.binary_search(l).is_ok()).collect()
    }
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

/// `{k : p_k > 1 - qhat}` per head, falling back to the argmax when empty.
pub fn threshold_sets(scores: Vec<Vec<f64>>, qhat: &[Option<f64>], fixed: &[Option<usize>]) -> PredictionSet {
    let mut classes = Vec::with_capacity(scores.len());
    let mut fallback = Vec::with_capacity(scores.len());
    for (h, p) in scores.iter().enumerate() {
        if let Some(c) = fixed[h] {
            classes.push(vec![c]);
            fallback.push(false);
            continue;
        }
        let threshold = 1.0 - qhat[h].unwrap_or(1.0);
        let set: Vec<usize> = (0..p.len()).filter(|&k| p[k] > threshold).collect();
        if set.is_empty() {
            classes.push(vec![argmax(p)]);
            fallback.push(true);
        } else {
            classes.push(set);
            fallback.push(false);
        }
    }
    PredictionSet { classes, scores, fallback }
}

impl CalibratedModel {
    /// Class emitted by each head that carries no uncertainty.
    pub fn fixed_classes(&self) -> Vec<Option<usize>> {
        (0..self.model.heads()).map(|h| fixed_class(&self.model, h)).collect()
    }

    pub fn predict_set(&self, feature: &FeatureVector) -> Result<PredictionSet> {
        Ok(self.predict_sets(std::slice::from_ref(feature))?.pop().expect("one row"))
    }

    pub fn predict_sets(&self, features: &[FeatureVector]) -> Result<Vec<PredictionSet>> {
        let fixed = self.fixed_classes();
        Ok(self.model.predict_batch(features)?.into_iter().map(|s| threshold_sets(s, &self.qhat, &fixed)).collect())
    }

    /// Same model and scores re-thresholded at another miscoverage level.
    pub fn with_alpha(&self, features: &[FeatureVector], labels: &[ClassLabel], alpha: f64) -> Result<CalibratedModel> {
        calibrate(self.model.clone(), self.grid.clone(), features, labels, alpha)
    }

    /// Fraction of samples whose true class is in the predicted set, per head.
    pub fn coverage_audit(&self, features: &[FeatureVector], labels: &[ClassLabel]) -> Result<Vec<f64>> {
        if features.is_empty() || features.len() != labels.len() {
            return Err(Error::invalid("coverage audit needs a non-empty labelled test set"));
        }
        let sets = self.predict_sets(features)?;
        Ok(coverage(&sets, labels))
    }

    pub fn to_region(&self, set: &PredictionSet) -> Result<UncertaintyRegion> {
        to_region(set, &self.grid)
    }
}

pub fn coverage(sets: &[PredictionSet], labels: &[ClassLabel]) -> Vec<f64> {
    let heads = labels[0].0.len();
    let mut hits = vec![0usize; heads];
    for (s, l) in sets.iter().zip(labels) {
        for (h, inside) in s.contains(l).into_iter().enumerate() {
            hits[h] += usize::from(inside);
        }
    }
    hits.into_iter().map(|c| c as f64 / labels.len() as f64).collect()
}

/// A maximal run of adjacent classes in one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionInterval {
    pub interval: Interval,
    pub classes: Range<usize>,
    /// Summed softmax of the member classes.
    pub mass: f64,
}

/// Per-dimension disjoint sorted interval unions; the region is their
/// Cartesian product of cuboids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyRegion {
    pub dims: Vec<Vec<RegionInterval>>,
}

pub fn to_region(set: &PredictionSet, grid: &QuantileGrid) -> Result<UncertaintyRegion> {
    if set.classes.len() != grid.dims.len() {
        return Err(Error::invalid("prediction set and grid disagree on dimensions"));
    }
    let mut dims = Vec::with_capacity(grid.dims.len());
    for (d, classes) in set.classes.iter().enumerate() {
        let g = &grid.dims[d];
        let mut sorted = classes.clone();
        sorted.sort_unstable();
        sorted.dedup();
        let mut runs: Vec<RegionInterval> = Vec::new();
        for &c in &sorted {
            let iv = g.interval(c)?;
            let mass = set.scores[d].get(c).copied().unwrap_or(0.0);
            match runs.last_mut() {
                Some(last) if last.classes.end == c => {
                    last.classes.end = c + 1;
                    last.interval.hi = iv.hi;
                    last.mass += mass;
                }
                _ => runs.push(RegionInterval { interval: iv, classes: c..c + 1, mass }),
            }
        }
        dims.push(runs);
    }
    Ok(UncertaintyRegion { dims })
}

impl UncertaintyRegion {
    pub fn interval_counts(&self) -> Vec<usize> {
        self.dims.iter().map(Vec::len).collect()
    }

    pub fn cuboid_count(&self) -> usize {
        self.cuboid_count_in(0..self.dims.len())
    }

    pub fn cuboid_count_in(&self, dims: Range<usize>) -> usize {
        self.dims[dims].iter().map(Vec::len).product()
    }

    /// Mean interval width per dimension.
    pub fn mean_width(&self, dim: usize) -> f64 {
        let d = &self.dims[dim];
        d.iter().map(|r| r.interval.width()).sum::<f64>() / d.len() as f64
    }

    /// Lazily enumerates cuboids over `dims` as per-dimension interval
    /// indices, in row-major order (last dimension fastest).
    pub fn cuboids(&self, dims: Range<usize>) -> Cuboids<'_> {
        let counts: Vec<usize> = self.dims[dims.clone()].iter().map(Vec::len).collect();
        let done = counts.contains(&0);
        Cuboids { region: self, dims, counts, next: vec![0; 0], done, started: false }
    }
}

pub struct Cuboids<'a> {
    region: &'a UncertaintyRegion,
    dims: Range<usize>,
    counts: Vec<usize>,
    next: Vec<usize>,
    done: bool,
    started: bool,
}

impl<'a> Cuboids<'a> {
    pub fn region(&self) -> &'a UncertaintyRegion {
        self.region
    }
}

impl Iterator for Cuboids<'_> {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        if !self.started {
            self.started = true;
            self.next = vec![0; self.dims.len()];
            return Some(self.next.clone());
        }
        for i in (0..self.counts.len()).rev() {
            self.next[i] += 1;
            if self.next[i] < self.counts[i] {
                return Some(self.next.clone());
            }
            self.next[i] = 0;
        }
        self.done = true;
        None
    }
}
