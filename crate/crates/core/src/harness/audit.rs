//! Coverage audit on exchangeable data.
//!
//! Trajectory frames are temporally correlated, so the audit draws a pool of
//! independent poses along the loop, renders them, and repeatedly splits the
//! pool at random into a calibration part of size `n` and a test part. Under
//! exchangeability the expected per-head coverage lies in
//! `[1 - alpha, 1 - alpha + 1 / (n + 1)]`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::pipeline::{prepare, train_classifier, train_indices};
use super::world::sample_poses;
use crate::conformal::{calibrate, conformal_quantile, threshold_sets};
use crate::discretize::{ClassLabel, DIM_NAMES};
use crate::error::{Error, Result};
use crate::vision::render;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub alpha: f64,
    /// Calibration size per resplit.
    pub n: usize,
    pub resplits: usize,
    /// Total number of independent poses; the rest of each split is the test part.
    pub pool: usize,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig { alpha: 0.1, n: 99, resplits: 500, pool: 600 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadCoverage {
    pub dim: String,
    /// False for single-class heads, which always cover and are not audited.
    pub audited: bool,
    pub mean: f64,
    /// Standard error of the mean over resplits.
    pub standard_error: f64,
    pub lower: f64,
    pub upper: f64,
    pub within_band: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub schema_version: u32,
    pub seed: u64,
    pub audit: AuditConfig,
    pub heads: Vec<HeadCoverage>,
    pub mean_set_size: f64,
    pub fallback_rate: f64,
    pub all_within_band: bool,
}

pub fn coverage_audit(cfg: &ExperimentConfig, audit: &AuditConfig) -> Result<CoverageReport> {
    if audit.n == 0 || audit.resplits < 2 || audit.pool <= audit.n {
        return Err(Error::invalid("audit needs n >= 1, at least 2 resplits and a pool larger than n"));
    }
    let p = prepare(cfg)?;
    let (model, grid) = train_classifier(cfg, &p, &train_indices(cfg, &p))?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xa0d1_7000);
    let poses = sample_poses(&cfg.world, audit.pool, &mut rng)?;
    let features = poses
        .iter()
        .map(|pose| p.extractor.extract(&render(&p.world.scene, pose)?))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<ClassLabel> = poses.iter().map(|q| grid.encode(q)).collect();
    let probs = model.predict_batch(&features)?;

    // The fixed heads do not depend on the split; calibrate once to read them.
    let fixed = calibrate(model, grid, &features[..audit.n], &labels[..audit.n], audit.alpha)?.fixed_classes();
    let heads = fixed.len();
    let mut per_split = vec![Vec::with_capacity(audit.resplits); heads];
    let (mut set_size, mut fallbacks, mut evaluated) = (0.0, 0usize, 0usize);
    let mut order: Vec<usize> = (0..audit.pool).collect();
    for _ in 0..audit.resplits {
        order.shuffle(&mut rng);
        let (cal, test) = order.split_at(audit.n);
        let qhat = (0..heads)
            .map(|h| match fixed[h] {
                Some(_) => Ok(None),
                None => {
                    let scores: Vec<f64> = cal.iter().map(|&i| (1.0 - probs[i][h][labels[i].0[h]]).clamp(0.0, 1.0)).collect();
                    conformal_quantile(&scores, audit.alpha).map(Some)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let mut hits = vec![0usize; heads];
        for &i in test {
            let set = threshold_sets(probs[i].clone(), &qhat, &fixed);
            for (h, inside) in set.contains(&labels[i]).into_iter().enumerate() {
                hits[h] += usize::from(inside);
            }
            set_size += set.mean_size();
            fallbacks += usize::from(set.any_fallback());
            evaluated += 1;
        }
        for (h, c) in hits.into_iter().enumerate() {
            per_split[h].push(c as f64 / test.len() as f64);
        }
    }

    let target = 1.0 - audit.alpha;
    let slack = 1.0 / (audit.n as f64 + 1.0);
    let heads: Vec<HeadCoverage> = per_split
        .iter()
        .enumerate()
        .map(|(h, c)| {
            let r = c.len() as f64;
            let mean = c.iter().sum::<f64>() / r;
            let var = c.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (r - 1.0);
            let se = (var / r).sqrt();
            let (lower, upper) = (target - 3.0 * se, target + slack + 3.0 * se);
            let audited = fixed[h].is_none();
            HeadCoverage {
                dim: DIM_NAMES[h].to_string(),
                audited,
                mean,
                standard_error: se,
                lower,
                upper,
                within_band: !audited || (lower..=upper).contains(&mean),
            }
        })
        .collect();
    Ok(CoverageReport {
        schema_version: 1,
        seed: cfg.seed,
        audit: *audit,
        all_within_band: heads.iter().all(|h| h.within_band),
        heads,
        mean_set_size: set_size / evaluated as f64,
        fallback_rate: fallbacks as f64 / evaluated as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_pool_not_larger_than_n() {
        let audit = AuditConfig { pool: 99, ..AuditConfig::default() };
        assert!(coverage_audit(&ExperimentConfig::default(), &audit).is_err());
    }
}
