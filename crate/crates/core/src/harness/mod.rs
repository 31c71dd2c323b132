//! Experiment orchestration: worlds, conditions, studies and audits.

pub mod audit;
pub mod config;
pub mod pipeline;
pub mod studies;
pub mod table;
pub mod world;

pub use audit::{coverage_audit, AuditConfig, CoverageReport};
pub use config::ExperimentConfig;
pub use pipeline::{calibrate_models, evaluate, prepare, train_arms, train_models, Evaluation, Outcome, Prepared, TrainedArms, TrainedModels};
pub use studies::{run_studies, Study};
pub use table::{ResultRow, ResultTable};
pub use world::{generate_world, Splits, World, WorldConfig};
