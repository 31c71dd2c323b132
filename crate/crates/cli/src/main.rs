//! `confvo`: generate synthetic worlds, train and calibrate both arms, roll
//! out on the test block, run the studies and audit coverage.
//!
//! Every command reads an optional JSON config (missing keys take their
//! defaults) and writes into `--out`, falling back to the config's
//! `output_dir`. Failures print one JSON error record on stderr and exit 1;
//! bad flags exit 2.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use confvo_core::harness::studies::{seed_suite, DEFAULT_SEEDS};
use confvo_core::harness::{
    calibrate_models, coverage_audit, evaluate, generate_world, prepare, run_studies, train_models, AuditConfig, ExperimentConfig,
    Study, TrainedArms, TrainedModels,
};
use confvo_core::{Error, Result};
use serde_json::json;

#[derive(Parser)]
#[command(name = "confvo", version, about = "Conformal multimodal pose regression with optical-flow reasoning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the world and write world.json (and PGM frames with --frames).
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        frames: bool,
    },
    /// Train the classifier and the regression baseline into model.json.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Calibrate model.json into calibrated.json and report the thresholds.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Trained models; defaults to <out>/model.json.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Roll both arms out over the test block.
    Rollout {
        #[command(flatten)]
        common: Common,
        /// Calibrated arms; defaults to <out>/calibrated.json.
        #[arg(long)]
        calibrated: Option<PathBuf>,
        /// Test-time pixel noise; defaults to the config's noise_sigma.
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Run one study (or all three) over a seed suite.
    Experiment {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = ["sample", "capacity", "noise", "all"])]
        study: String,
        /// Number of consecutive seeds starting at the config seed.
        #[arg(long, default_value_t = DEFAULT_SEEDS)]
        seeds: usize,
    },
    /// Split-conformal coverage audit on exchangeable poses.
    Audit {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long, default_value_t = 500)]
        resplits: usize,
        /// Calibration size per resplit.
        #[arg(long, default_value_t = 99)]
        n: usize,
        /// Independent poses in the pool.
        #[arg(long, default_value_t = 600)]
        pool: usize,
    },
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
    fs::create_dir_all(&out)?;
    Ok((cfg, out))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    match cli.command {
        Command::Generate { common, frames } => {
            let (cfg, out) = load(&common)?;
            let world = generate_world(&cfg.world, cfg.trajectory_length, cfg.seed)?;
            write_json(&out.join("world.json"), &world)?;
            if frames {
                let dir = out.join("frames");
                fs::create_dir_all(&dir)?;
                for (i, f) in world.render_all()?.iter().enumerate() {
                    f.write_pgm(BufWriter::new(File::create(dir.join(format!("{i:04}.pgm")))?))?;
                }
            }
            cfg.save(&out.join("config.json"))?;
            Ok(json!({"world": out.join("world.json"), "frames": world.trajectory.len(), "landmarks": world.scene.landmarks.len()}))
        }
        Command::Train { common } => {
            let (cfg, out) = load(&common)?;
            let p = prepare(&cfg)?;
            let models = train_models(&cfg, &p)?;
            write_json(&out.join("model.json"), &models)?;
            Ok(json!({
                "model": out.join("model.json"),
                "train_frames": models.train_indices.len(),
                "classifier_epochs": models.model.report.epochs,
                "classifier_loss": models.model.report.losses.last(),
                "baseline_loss": models.baseline.report.losses.last(),
            }))
        }
        Command::Calibrate { common, model } => {
            let (cfg, out) = load(&common)?;
            let models: TrainedModels = read_json(&model.unwrap_or_else(|| out.join("model.json")))?;
            let p = prepare(&cfg)?;
            let arms = calibrate_models(&cfg, &p, models)?;
            write_json(&out.join("calibrated.json"), &arms)?;
            let report = json!({
                "alpha": arms.calibrated.alpha,
                "calibration_size": arms.calibrated.calibration_size,
                "qhat": confvo_core::discretize::DIM_NAMES.iter().zip(&arms.calibrated.qhat)
                    .map(|(d, q)| json!({"dim": d, "qhat": q})).collect::<Vec<_>>(),
            });
            write_json(&out.join("qhat.json"), &report)?;
            Ok(report)
        }
        Command::Rollout { common, calibrated, noise } => {
            let (cfg, out) = load(&common)?;
            let arms: TrainedArms = read_json(&calibrated.unwrap_or_else(|| out.join("calibrated.json")))?;
            let p = prepare(&cfg)?;
            let eval = evaluate(&cfg, &p, &arms, noise.unwrap_or(cfg.noise_sigma))?;
            eval.rollout.write_jsonl(BufWriter::new(File::create(out.join("rollout.jsonl"))?))?;
            write_json(&out.join("trajectory.json"), &json!({"predicted": eval.rollout.trajectory, "truth": eval.truth}))?;
            write_json(&out.join("outcome.json"), &eval.outcome)?;
            Ok(serde_json::to_value(&eval.outcome)?)
        }
        Command::Experiment { common, study, seeds } => {
            let (cfg, out) = load(&common)?;
            let studies = if study == "all" { Study::ALL.to_vec() } else { vec![Study::parse(&study)?] };
            let table = run_studies(&cfg, &studies, &seed_suite(cfg.seed, seeds))?;
            let csv = out.join(format!("{study}.csv"));
            table.write_csv(BufWriter::new(File::create(&csv)?))?;
            let mut doc = table.to_json()?;
            doc.push('\n');
            fs::write(out.join(format!("{study}.json")), doc)?;
            Ok(json!({"csv": csv, "rows": table.rows.len(), "summary": table.summary()}))
        }
        Command::Audit { common, alpha, resplits, n, pool } => {
            let (cfg, out) = load(&common)?;
            let report = coverage_audit(&cfg, &AuditConfig { alpha, n, resplits, pool })?;
            write_json(&out.join("coverage.json"), &report)?;
            Ok(serde_json::to_value(&report)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_record(&e));
            ExitCode::from(1)
        }
    }
}

fn error_record(e: &Error) -> serde_json::Value {
    json!({"error": {"kind": e.kind(), "message": e.to_string()}})
}
