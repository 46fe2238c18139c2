//! Experiment configuration, Monte Carlo runs, sweeps and reporting.

pub mod calibrate;
pub mod config;
pub mod metrics;
pub mod predict;
pub mod presets;
pub mod report;
pub mod runner;
pub mod sweep;

pub use calibrate::{calibrate, drop_iteration, log_grid, Calibration};
pub use config::ExperimentConfig;
pub use metrics::{mse_test, to_db, MetricsRecord, MseEvaluator};
pub use predict::{predict, prediction_records, PredictionRecord, PredictionSummary};
pub use presets::{preset, PRESET_NAMES};
pub use report::{output_path, summarize, write_csv, write_experiment, write_json, AlgorithmSummary, Summary};
pub use runner::{
    feature_correlation, feature_map, run_algorithms, run_experiment, run_with_data, AlgorithmResult, DataSource, ExperimentResult,
};
pub use sweep::{apply_parameter, sweep, SweepRow, SWEEP_PARAMETERS};
