//! The three studies: training fraction, capacity tier and test-time noise.
//!
//! Every seed gets its own world. Trained arms and evaluations are cached
//! per seed, so the shared condition (full data, base tier, no noise) is
//! trained and rolled out once even when several studies need it.

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::pipeline::{evaluate, prepare, train_arms, Outcome, Prepared, TrainedArms};
use super::table::{ResultRow, ResultTable};
use crate::classifier::CapacityTier;
use crate::error::{Error, Result};

pub const FRACTIONS: [f64; 3] = [0.4, 0.8, 1.0];
pub const TIERS: [CapacityTier; 3] = [CapacityTier::Small, CapacityTier::Medium, CapacityTier::Large];
pub const NOISE_LEVELS: [f64; 4] = [0.0, 0.05, 0.1, 0.2];
pub const DEFAULT_SEEDS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    Sample,
    Capacity,
    Noise,
}

impl Study {
    pub const ALL: [Study; 3] = [Study::Sample, Study::Capacity, Study::Noise];

    pub fn label(self) -> &'static str {
        match self {
            Study::Sample => "sample",
            Study::Capacity => "capacity",
            Study::Noise => "noise",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Study::ALL
            .into_iter()
            .find(|st| st.label() == s)
            .ok_or_else(|| Error::invalid(format!("unknown study {s:?} (expected sample, capacity or noise)")))
    }

    /// Condition label and the (fraction, tier, noise) it runs at.
    pub fn conditions(self, base: &ExperimentConfig) -> Vec<(String, f64, CapacityTier, f64)> {
        match self {
            Study::Sample => FRACTIONS.iter().map(|&f| (fraction_label(f), f, base.capacity, base.noise_sigma)).collect(),
            Study::Capacity => {
                TIERS.iter().map(|&t| (format!("capacity={}", t.label()), base.train_fraction, t, base.noise_sigma)).collect()
            }
            Study::Noise => NOISE_LEVELS.iter().map(|&s| (noise_label(s), base.train_fraction, base.capacity, s)).collect(),
        }
    }
}

pub fn fraction_label(f: f64) -> String {
    format!("fraction={f:.1}")
}

pub fn noise_label(s: f64) -> String {
    format!("sigma={s:.2}")
}

/// Consecutive seeds starting at `first`.
pub fn seed_suite(first: u64, count: usize) -> Vec<u64> {
    (first..first + count as u64).collect()
}

struct SeedRun {
    prepared: Prepared,
    arms: Vec<((u64, CapacityTier), TrainedArms)>,
    outcomes: Vec<((u64, CapacityTier, u64), Outcome)>,
}

impl SeedRun {
    fn outcome(&mut self, base: &ExperimentConfig, fraction: f64, tier: CapacityTier, sigma: f64) -> Result<Outcome> {
        let key = (fraction.to_bits(), tier, sigma.to_bits());
        if let Some((_, o)) = self.outcomes.iter().find(|(k, _)| *k == key) {
            return Ok(o.clone());
        }
        let cfg = ExperimentConfig { train_fraction: fraction, capacity: tier, noise_sigma: sigma, ..base.clone() };
        let arm_key = (fraction.to_bits(), tier);
        if !self.arms.iter().any(|(k, _)| *k == arm_key) {
            let arms = train_arms(&cfg, &self.prepared)?;
            self.arms.push((arm_key, arms));
        }
        let arms = &self.arms.iter().find(|(k, _)| *k == arm_key).expect("just inserted").1;
        let o = evaluate(&cfg, &self.prepared, arms, sigma)?.outcome;
        self.outcomes.push((key, o.clone()));
        Ok(o)
    }
}

/// Runs `studies` over `seeds`; `base.seed` is ignored in favour of each
/// suite seed. Rows come back sorted by study, condition and seed.
pub fn run_studies(base: &ExperimentConfig, studies: &[Study], seeds: &[u64]) -> Result<ResultTable> {
    if seeds.is_empty() {
        return Err(Error::invalid("at least one seed is required"));
    }
    let mut table = ResultTable::default();
    for &seed in seeds {
        let cfg = ExperimentConfig { seed, ..base.clone() };
        let mut run = SeedRun { prepared: prepare(&cfg)?, arms: Vec::new(), outcomes: Vec::new() };
        for &study in studies {
            for (label, fraction, tier, sigma) in study.conditions(&cfg) {
                let o = run.outcome(&cfg, fraction, tier, sigma)?;
                table.push(ResultRow::new(study.label(), &label, seed, &o));
            }
        }
    }
    table.sort();
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_sort_in_numeric_order() {
        let mut f: Vec<String> = FRACTIONS.iter().rev().map(|&x| fraction_label(x)).collect();
        f.sort();
        assert_eq!(f, vec!["fraction=0.4", "fraction=0.8", "fraction=1.0"]);
        let mut s: Vec<String> = NOISE_LEVELS.iter().rev().map(|&x| noise_label(x)).collect();
        s.sort();
        assert_eq!(s, vec!["sigma=0.00", "sigma=0.05", "sigma=0.10", "sigma=0.20"]);
    }

    #[test]
    fn study_names_parse() {
        for s in Study::ALL {
            assert_eq!(Study::parse(s.label()).unwrap(), s);
        }
        assert!(Study::parse("speed").is_err());
    }

    #[test]
    fn condition_counts() {
        let base = ExperimentConfig::default();
        assert_eq!(Study::Sample.conditions(&base).len(), 3);
        assert_eq!(Study::Capacity.conditions(&base).len(), 3);
        assert_eq!(Study::Noise.conditions(&base).len(), 4);
    }

    #[test]
    fn small_run_has_one_row_per_condition_and_seed() {
        let base = ExperimentConfig { trajectory_length: 100, k: 10, ..Default::default() };
        let t = run_studies(&base, &[Study::Noise], &[3]).unwrap();
        assert_eq!(t.rows.len(), 4);
        let zero = t.row("noise", "sigma=0.00", 3).unwrap();
        // The noiseless row equals a direct run with noise disabled.
        let cfg = ExperimentConfig { seed: 3, ..base };
        let p = prepare(&cfg).unwrap();
        let arms = train_arms(&cfg, &p).unwrap();
        let o = evaluate(&cfg, &p, &arms, 0.0).unwrap().outcome;
        assert_eq!(zero.conformal_rmse, o.conformal_rmse);
        assert_eq!(zero.classical_rmse, o.classical_rmse);
    }
}
