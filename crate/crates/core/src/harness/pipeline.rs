//! One experimental condition end to end: world, training of both arms,
//! calibration and test-time evaluation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::world::{generate_world, World};
use crate::baseline::{baseline_rollout, orientation_error, rmse};
use crate::classifier::{train_baseline, train_multihead, FeatureExtractor, FeatureVector, MultiHeadModel, RegressionBaseline};
use crate::conformal::{calibrate, coverage, CalibratedModel};
use crate::discretize::{fit_grid, ClassLabel, QuantileGrid};
use crate::error::Result;
use crate::geometry::Trajectory;
use crate::reasoning::{rollout, RolloutContext, RolloutResult, POSITION_DIMS};
use crate::vision::Frame;

/// World plus its clean frames and features.
pub struct Prepared {
    pub world: World,
    pub frames: Vec<Frame>,
    pub features: Vec<FeatureVector>,
    pub extractor: FeatureExtractor,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let world = generate_world(&cfg.world, cfg.trajectory_length, cfg.seed)?;
    let mut frames = world.render_all()?;
    if cfg.train_noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed(cfg.seed, cfg.train_noise_sigma) ^ 0x5eed);
        for f in &mut frames[world.splits.train.clone()] {
            *f = f.with_noise(cfg.train_noise_sigma, &mut rng);
        }
    }
    let mut extractor = FeatureExtractor::new(cfg.world.image_size, cfg.world.image_size, cfg.feature_blocks)?;
    extractor.smoothing_sigma = cfg.feature_smoothing;
    let features = frames.iter().map(|f| extractor.extract(f)).collect::<Result<Vec<_>>>()?;
    Ok(Prepared { world, frames, features, extractor })
}

/// Evenly strided subset of `0..n` with `round(fraction * n)` members.
pub fn subsample(n: usize, fraction: f64) -> Vec<usize> {
    let m = ((fraction * n as f64).round() as usize).clamp(1, n);
    (0..m).map(|j| j * n / m).collect()
}

/// Both arms after training, before calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModels {
    pub grid: QuantileGrid,
    pub model: MultiHeadModel,
    pub baseline: RegressionBaseline,
    pub train_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedArms {
    pub calibrated: CalibratedModel,
    pub baseline: RegressionBaseline,
    pub train_indices: Vec<usize>,
}

/// Quantile grid and multi-head classifier fitted on the training subset.
pub fn train_classifier(cfg: &ExperimentConfig, p: &Prepared, train_indices: &[usize]) -> Result<(MultiHeadModel, QuantileGrid)> {
    let train_traj = p.world.trajectory.select(train_indices)?;
    let grid = fit_grid(&train_traj, cfg.k)?;
    let feats: Vec<FeatureVector> = train_indices.iter().map(|&i| p.features[i].clone()).collect();
    let labels: Vec<ClassLabel> = train_traj.poses().map(|q| grid.encode(q)).collect();
    let model = train_multihead(&feats, &labels, &grid.classes_per_dim(), cfg.capacity.architecture(), &cfg.training, cfg.seed)?;
    Ok((model, grid))
}

pub fn train_indices(cfg: &ExperimentConfig, p: &Prepared) -> Vec<usize> {
    let block = p.world.splits.train.clone();
    subsample(block.len(), cfg.train_fraction).into_iter().map(|i| block.start + i).collect()
}

pub fn train_models(cfg: &ExperimentConfig, p: &Prepared) -> Result<TrainedModels> {
    let train_indices = train_indices(cfg, p);
    let (model, grid) = train_classifier(cfg, p, &train_indices)?;
    let feats: Vec<FeatureVector> = train_indices.iter().map(|&i| p.features[i].clone()).collect();
    let poses: Vec<_> = train_indices.iter().map(|&i| p.world.trajectory.points()[i].pose).collect();
    let baseline = train_baseline(&feats, &poses, cfg.capacity.architecture(), &cfg.training, cfg.seed)?;
    Ok(TrainedModels { grid, model, baseline, train_indices })
}

/// Calibrates the classifier on the calibration block.
pub fn calibrate_models(cfg: &ExperimentConfig, p: &Prepared, models: TrainedModels) -> Result<TrainedArms> {
    let cal = p.world.splits.calibration.clone();
    let cal_feats = &p.features[cal.clone()];
    let labels: Vec<ClassLabel> = p.world.trajectory.points()[cal].iter().map(|t| models.grid.encode(&t.pose)).collect();
    let calibrated = calibrate(models.model, models.grid, cal_feats, &labels, cfg.alpha)?;
    Ok(TrainedArms { calibrated, baseline: models.baseline, train_indices: models.train_indices })
}

pub fn train_arms(cfg: &ExperimentConfig, p: &Prepared) -> Result<TrainedArms> {
    calibrate_models(cfg, p, train_models(cfg, p)?)
}

/// Metrics of one condition on the test block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub conformal_rmse: f64,
    pub classical_rmse: f64,
    /// Per-frame heaviest-cuboid decode, without reasoning.
    pub argmax_rmse: f64,
    pub conformal_orientation_error: f64,
    pub classical_orientation_error: f64,
    pub mean_set_size: f64,
    pub coverage: f64,
    pub fallback_rate: f64,
    /// Share of test frames with a disjoint position prediction set.
    pub multimodal_rate: f64,
    pub mean_position_width: f64,
    /// Mean interval width over all dimensions with more than one class.
    pub mean_interval_width: f64,
}

pub struct Evaluation {
    pub outcome: Outcome,
    pub rollout: RolloutResult,
    pub truth: Trajectory,
}

pub fn noise_seed(seed: u64, sigma: f64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (sigma * 1e6).round() as u64
}

pub fn evaluate(cfg: &ExperimentConfig, p: &Prepared, arms: &TrainedArms, noise_sigma: f64) -> Result<Evaluation> {
    let test = p.world.splits.test.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed(cfg.seed, noise_sigma));
    let frames: Vec<Frame> = p.frames[test.clone()].iter().map(|f| f.with_noise(noise_sigma, &mut rng)).collect();
    let ids: Vec<usize> = p.world.trajectory.points()[test.clone()].iter().map(|t| t.frame).collect();
    let truth = p.world.trajectory.select(&test.clone().collect::<Vec<_>>())?;
    let intrinsics = cfg.world.intrinsics()?;
    let ctx = RolloutContext { extractor: &p.extractor, intrinsics: &intrinsics, vision: &cfg.vision };
    let result = rollout(&arms.calibrated, ctx, &frames, &ids)?;
    let classical = baseline_rollout(&arms.baseline, &p.extractor, &frames, &ids)?;

    let features = frames.iter().map(|f| p.extractor.extract(f)).collect::<Result<Vec<_>>>()?;
    let sets = arms.calibrated.predict_sets(&features)?;
    let grid = &arms.calibrated.grid;
    let labels: Vec<ClassLabel> = truth.poses().map(|q| grid.encode(q)).collect();
    let cov = coverage(&sets, &labels);
    let mut argmax_points = Vec::with_capacity(sets.len());
    let mut multimodal = 0usize;
    let mut width = 0.0;
    let mut all_width = 0.0;
    let spread: Vec<usize> = (0..grid.dims.len()).filter(|&d| grid.dims[d].classes() > 1).collect();
    for (s, t) in sets.iter().zip(truth.points()) {
        let region = arms.calibrated.to_region(s)?;
        if POSITION_DIMS.clone().any(|d| region.dims[d].len() >= 2) {
            multimodal += 1;
        }
        width += POSITION_DIMS.clone().map(|d| region.mean_width(d)).sum::<f64>() / 3.0;
        all_width += spread.iter().map(|&d| region.mean_width(d)).sum::<f64>() / spread.len().max(1) as f64;
        let pose = crate::reasoning::highest_mass_candidate(&region).pose()?;
        argmax_points.push(crate::geometry::TrajectoryPoint { frame: t.frame, pose });
    }
    let argmax = Trajectory::new(argmax_points)?;
    let n = sets.len() as f64;
    let outcome = Outcome {
        conformal_rmse: rmse(&result.trajectory, &truth)?,
        classical_rmse: rmse(&classical.trajectory, &truth)?,
        argmax_rmse: rmse(&argmax, &truth)?,
        conformal_orientation_error: orientation_error(&result.trajectory, &truth)?,
        classical_orientation_error: orientation_error(&classical.trajectory, &truth)?,
        mean_set_size: result.mean_set_size(),
        coverage: cov.iter().sum::<f64>() / cov.len() as f64,
        fallback_rate: result.fallback_rate(),
        multimodal_rate: multimodal as f64 / n,
        mean_position_width: width / n,
        mean_interval_width: all_width / n,
    };
    Ok(Evaluation { outcome, rollout: result, truth })
}
