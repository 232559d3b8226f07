//! Two-pass calibration pipeline over synthetic scenes, metrics and reports.

pub mod ap;
pub mod assign;
pub mod config;
pub mod experiment;
pub mod loss;
pub mod pipeline;

pub use ap::{evaluate_ap50, GroundTruth};
pub use assign::{assign_proposals, Assignment};
pub use config::{ConfigError, EstimatorConfig, ExperimentConfig};
pub use experiment::{
    run_experiment, run_sweep, run_trial, with_threads, write_report, write_sweep, ExperimentReport, HarnessError,
    SweepReport, TrialReport,
};
pub use loss::{cls_loss, total_loss};
pub use pipeline::{run_disco_iteration, Diagnostics, SceneOutcome};
