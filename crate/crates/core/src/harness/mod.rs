//! Experiment harness: configuration, runs, metrics, comparisons and checks.

pub mod compare;
pub mod config;
pub mod experiment;
pub mod metrics;
pub mod verify;

pub use compare::{compare, default_targets, Comparison, ComparisonRow, Reach, RunMetrics, Target};
pub use config::{apply_env_overrides, DataConfig, DataSource, ExperimentConfig, MethodConfig, ModelConfig, ENV_PREFIX};
pub use experiment::{
    run_experiment, RunOptions, RunSummary, Simulation, Task, CHECKPOINT_FILE, CONFIG_FILE, METRICS_FILE, PAYLOAD_DIR,
};
pub use metrics::{read_metrics, MetricsRecord, MetricsWriter};
pub use verify::{analytic_step, verify_config, CheckOutcome, VERIFY_ROUNDS};
