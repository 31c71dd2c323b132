//! End-to-end checks on the default symmetric world.

use confvo_core::baseline::rmse;
use confvo_core::geometry::TrajectoryPoint;
use confvo_core::harness::table::median;
use confvo_core::harness::{evaluate, generate_world, prepare, train_arms, ExperimentConfig, WorldConfig};
use confvo_core::reasoning::{enumerate_over, POSITION_DIMS};
use confvo_core::Trajectory;
use proptest::prelude::*;

#[test]
fn symmetric_world_produces_disjoint_position_sets() {
    let cfg = ExperimentConfig::default();
    let p = prepare(&cfg).unwrap();
    let arms = train_arms(&cfg, &p).unwrap();
    let sets = arms.calibrated.predict_sets(&p.features[p.world.splits.test.clone()]).unwrap();
    let events = sets
        .iter()
        .filter(|s| {
            let r = arms.calibrated.to_region(s).unwrap();
            POSITION_DIMS.clone().any(|d| r.dims[d].len() >= 2)
        })
        .count();
    assert!(events > 0);
}

#[test]
fn reasoning_beats_argmax_and_respects_the_oracle_bound() {
    let cfg = ExperimentConfig::default();
    let p = prepare(&cfg).unwrap();
    let arms = train_arms(&cfg, &p).unwrap();
    let eval = evaluate(&cfg, &p, &arms, 0.0).unwrap();

    // Oracle: at every step take the position candidate closest to the truth.
    let test = p.world.splits.test.clone();
    let sets = arms.calibrated.predict_sets(&p.features[test.clone()]).unwrap();
    let mut best = Vec::new();
    for (s, t) in sets.iter().zip(eval.truth.points()) {
        let region = arms.calibrated.to_region(s).unwrap();
        let nearest = enumerate_over(&region, POSITION_DIMS)
            .into_iter()
            .min_by(|a, b| (a.position - t.pose.position).norm().total_cmp(&(b.position - t.pose.position).norm()))
            .unwrap();
        let mut pose = t.pose;
        pose.position = nearest.position;
        best.push(TrajectoryPoint { frame: t.frame, pose });
    }
    let oracle = rmse(&Trajectory::new(best).unwrap(), &eval.truth).unwrap();
    let o = &eval.outcome;
    assert!(o.conformal_rmse >= oracle - 1e-12, "reasoning {} below the oracle bound {oracle}", o.conformal_rmse);
    assert!(o.conformal_rmse < o.argmax_rmse, "reasoning {} vs argmax {}", o.conformal_rmse, o.argmax_rmse);
}

#[test]
fn rollout_is_reproducible() {
    let cfg = ExperimentConfig { trajectory_length: 100, seed: 4, ..Default::default() };
    let run = || {
        let p = prepare(&cfg).unwrap();
        let arms = train_arms(&cfg, &p).unwrap();
        evaluate(&cfg, &p, &arms, 0.05).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.outcome, b.outcome);
    assert_eq!(a.rollout, b.rollout);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn splits_are_disjoint_and_cover_every_frame(seed in 0u64..1000, len in 60usize..400) {
        let w = generate_world(&WorldConfig::default(), len, seed).unwrap();
        let s = &w.splits;
        prop_assert!(s.train.end <= s.calibration.start && s.calibration.end <= s.test.start);
        prop_assert_eq!(s.train.len() + s.calibration.len() + s.test.len(), len);
        prop_assert_eq!(w.trajectory.len(), len);
    }
}

/// Compared on medians over five seeds.
#[test]
fn baseline_is_competent_without_symmetry() {
    let mut classical = Vec::new();
    let mut conformal = Vec::new();
    for seed in 0..5 {
        let mut cfg = ExperimentConfig { seed, ..Default::default() };
        cfg.world.symmetric = false;
        let p = prepare(&cfg).unwrap();
        let arms = train_arms(&cfg, &p).unwrap();
        let o = evaluate(&cfg, &p, &arms, 0.0).unwrap().outcome;
        classical.push(o.classical_rmse);
        conformal.push(o.conformal_rmse);
    }
    let (a, b) = (median(&mut classical), median(&mut conformal));
    assert!(a < 2.0 * b, "median classical {a} conformal {b}");
}
