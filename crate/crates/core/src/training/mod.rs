//! Experiment configuration, the training loop, scoring artifacts and the
//! gradient check.

pub mod artifacts;
pub mod config;
pub mod gradcheck;
pub mod pipeline;
pub mod plan;

pub use artifacts::{load_scores, sweep, sweep_csv, write_artifacts, Checkpoint, Metrics, SweepRow};
pub use config::{DataSource, TrainConfig, PRESETS};
pub use gradcheck::{check_fixture, check_plan, CheckedTerm, GradCheckReport};
pub use pipeline::{
    encode_observed, imputation_quality, plan_batch, prepare_data, run_experiment, score_dataset,
    train, EpochLog, ExperimentResult, ImputationQuality, PreparedData, TrainedModel,
};
pub use plan::{evaluate, BatchPlan, Evaluation, TermWeights, ViewSlots};
