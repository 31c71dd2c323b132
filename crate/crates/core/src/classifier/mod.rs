//! Multi-head softmax classifier over pose classes and the regression arm
//! sharing its trunk.

pub mod features;
pub mod network;

use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use features::{FeatureExtractor, FeatureVector};
pub use network::{Architecture, Network, Objective, Standardizer, TrainConfig, TrainReport};

use crate::discretize::{ClassLabel, POSE_DIMS};
use crate::error::{Error, Result};
use crate::geometry::Pose;

pub const MODEL_VERSION: u32 = 1;

/// Named capacity settings used by the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapacityTier {
    Small,
    Medium,
    Large,
}

impl CapacityTier {
    pub const ALL: [CapacityTier; 3] = [CapacityTier::Small, CapacityTier::Medium, CapacityTier::Large];

    pub fn architecture(self) -> Architecture {
        match self {
            CapacityTier::Small => Architecture::Linear,
            CapacityTier::Medium => Architecture::Hidden(32),
            CapacityTier::Large => Architecture::Hidden(256),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            CapacityTier::Small => "small",
            CapacityTier::Medium => "medium",
            CapacityTier::Large => "large",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "small" => Ok(CapacityTier::Small),
            "medium" => Ok(CapacityTier::Medium),
            "large" => Ok(CapacityTier::Large),
            _ => Err(Error::invalid(format!("unknown capacity tier {s:?}"))),
        }
    }
}

fn check_features(features: &[FeatureVector]) -> Result<usize> {
    let first = features.first().ok_or_else(|| Error::invalid("no training samples"))?;
    let f = first.len();
    if f == 0 || features.iter().any(|r| r.len() != f || r.iter().any(|v| !v.is_finite())) {
        return Err(Error::invalid("feature vectors must be non-empty, finite and of equal length"));
    }
    Ok(f)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiHeadModel {
    pub version: u32,
    pub architecture: Architecture,
    pub head_classes: Vec<usize>,
    /// `Some(c)` marks a head whose training labels held only class `c`;
    /// it always predicts that class with probability one.
    pub constant_heads: Vec<Option<usize>>,
    pub standardizer: Standardizer,
    pub network: Network,
    pub report: TrainReport,
}

fn head_ranges(classes: &[usize]) -> Vec<Range<usize>> {
    let mut start = 0;
    classes
        .iter()
        .map(|&c| {
            let r = start..start + c;
            start += c;
            r
        })
        .collect()
}

/// Trains one softmax head per pose dimension on a shared trunk.
pub fn train_multihead(
    features: &[FeatureVector],
    labels: &[ClassLabel],
    head_classes: &[usize],
    arch: Architecture,
    config: &TrainConfig,
    seed: u64,
) -> Result<MultiHeadModel> {
    let f = check_features(features)?;
    if labels.len() != features.len() {
        return Err(Error::invalid("features and labels differ in length"));
    }
    let max_k = head_classes.iter().copied().max().unwrap_or(0);
    if head_classes.is_empty() || head_classes.contains(&0) {
        return Err(Error::invalid("every head needs at least one class"));
    }
    if features.len() < max_k {
        return Err(Error::invalid(format!("need at least {max_k} training samples, got {}", features.len())));
    }
    if matches!(arch, Architecture::Hidden(0)) {
        return Err(Error::invalid("hidden width must be at least 1"));
    }
    for l in labels {
        if l.0.len() != head_classes.len() || l.0.iter().zip(head_classes).any(|(c, k)| c >= k) {
            return Err(Error::invalid("label does not fit the head layout"));
        }
    }
    let constant_heads: Vec<Option<usize>> = (0..head_classes.len())
        .map(|h| {
            let first = labels[0].0[h];
            (head_classes[h] > 1 && labels.iter().all(|l| l.0[h] == first)).then_some(first)
        })
        .collect();

    let standardizer = Standardizer::fit(features);
    let x = standardizer.matrix(features);
    let heads = head_ranges(head_classes);
    let targets: Vec<Vec<usize>> = labels.iter().map(|l| l.0.clone()).collect();
    let mut network = Network::init(f, heads.last().unwrap().end, arch, seed);
    let report = network::train(&mut network, &x, &Objective::Softmax { heads: &heads, targets: &targets, smoothing: config.label_smoothing }, config)?;
    Ok(MultiHeadModel {
        version: MODEL_VERSION,
        architecture: arch,
        head_classes: head_classes.to_vec(),
        constant_heads,
        standardizer,
        network,
        report,
    })
}

impl MultiHeadModel {
    pub fn heads(&self) -> usize {
        self.head_classes.len()
    }

    pub fn feature_len(&self) -> usize {
        self.standardizer.mean.len()
    }

    /// Per-head probability vectors for one feature vector.
    pub fn predict_scores(&self, feature: &FeatureVector) -> Result<Vec<Vec<f64>>> {
        Ok(self.predict_batch(std::slice::from_ref(feature))?.pop().expect("one row"))
    }

    pub fn predict_batch(&self, features: &[FeatureVector]) -> Result<Vec<Vec<Vec<f64>>>> {
        if features.iter().any(|r| r.len() != self.feature_len()) {
            return Err(Error::invalid("feature length does not match the model"));
        }
        let z = self.network.forward(&self.standardizer.matrix(features));
        let heads = head_ranges(&self.head_classes);
        Ok((0..features.len())
            .map(|i| {
                heads
                    .iter()
                    .zip(&self.constant_heads)
                    .map(|(r, constant)| {
                        if let Some(c) = constant {
                            let mut p = vec![0.0; r.len()];
                            p[*c] = 1.0;
                            return p;
                        }
                        let row: Vec<f64> = r.clone().map(|j| z[(i, j)]).collect();
                        softmax(&row)
                    })
                    .collect()
            })
            .collect())
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Direct regression of the 7-vector pose on the same trunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionBaseline {
    pub version: u32,
    pub architecture: Architecture,
    pub standardizer: Standardizer,
    pub target_standardizer: Standardizer,
    pub network: Network,
    pub report: TrainReport,
}

/// Squared-error regression on standardized targets; with zero output
/// weights at start the prediction begins at the training mean.
pub fn train_baseline(
    features: &[FeatureVector],
    poses: &[Pose],
    arch: Architecture,
    config: &TrainConfig,
    seed: u64,
) -> Result<RegressionBaseline> {
    let f = check_features(features)?;
    if poses.len() != features.len() {
        return Err(Error::invalid("features and poses differ in length"));
    }
    if matches!(arch, Architecture::Hidden(0)) {
        return Err(Error::invalid("hidden width must be at least 1"));
    }
    let targets: Vec<Vec<f64>> = poses.iter().map(|p| p.to_vector().to_vec()).collect();
    let target_standardizer = Standardizer::fit(&targets);
    let y = target_standardizer.matrix(&targets);
    let standardizer = Standardizer::fit(features);
    let x = standardizer.matrix(features);
    let mut network = Network::init(f, POSE_DIMS, arch, seed);
    let report = network::train(&mut network, &x, &Objective::Squared { targets: &y }, config)?;
    Ok(RegressionBaseline { version: MODEL_VERSION, architecture: arch, standardizer, target_standardizer, network, report })
}

impl RegressionBaseline {
    pub fn predict_batch(&self, features: &[FeatureVector]) -> Result<Vec<Pose>> {
        if features.iter().any(|r| r.len() != self.standardizer.mean.len()) {
            return Err(Error::invalid("feature length does not match the model"));
        }
        let z: DMatrix<f64> = self.network.forward(&self.standardizer.matrix(features));
        (0..features.len())
            .map(|i| {
                let row: Vec<f64> = z.row(i).iter().copied().collect();
                let v = self.target_standardizer.invert(&row);
                let arr: [f64; POSE_DIMS] = v.try_into().expect("seven outputs");
                Pose::from_vector(&arr)
            })
            .collect()
    }

    pub fn predict(&self, feature: &FeatureVector) -> Result<Pose> {
        Ok(self.predict_batch(std::slice::from_ref(feature))?.pop().expect("one row"))
    }
}
