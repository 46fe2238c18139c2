//! CSV and JSON outputs of an experiment.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;

use super::calibrate::{drop_iteration, DROP_DB};
use super::config::ExperimentConfig;
use super::runner::ExperimentResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub algorithm: String,
    pub mu: f64,
    pub initial_mse_db: f64,
    pub final_mse_db: f64,
    pub uplink_params: u64,
    pub downlink_params: u64,
    pub participations: u64,
    pub comm_ratio: f64,
    pub drop_iteration: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub runs: usize,
    pub horizon: usize,
    pub available_events: u64,
    #[serde(skip_serializing_if = "String::is_empty", default)]
    pub note: String,
    pub algorithms: Vec<AlgorithmSummary>,
    /// `(2 / lambda_max, 1 / lambda_max)` when computed.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mu_bounds: Option<(f64, f64)>,
}

pub fn summarize(cfg: &ExperimentConfig, res: &ExperimentResult) -> Summary {
    let algorithms = res
        .algorithms
        .iter()
        .map(|a| {
            let db = a.mse_db();
            AlgorithmSummary {
                algorithm: a.algorithm.to_string(),
                mu: a.mu,
                initial_mse_db: db.first().copied().unwrap_or(f64::NAN),
                final_mse_db: a.final_mse_db(),
                uplink_params: a.uplink.last().copied().unwrap_or(0),
                downlink_params: a.downlink.last().copied().unwrap_or(0),
                participations: a.participations,
                comm_ratio: res.comm_ratio(a.algorithm, cfg.model.dim).unwrap_or(0.0),
                drop_iteration: drop_iteration(&db, DROP_DB),
            }
        })
        .collect();
    Summary {
        name: cfg.experiment.name.clone(),
        runs: res.runs,
        horizon: res.horizon,
        available_events: res.available_events,
        note: cfg.experiment.note.clone(),
        algorithms,
        mu_bounds: None,
    }
}

/// Writes serializable rows as CSV with a header line.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

/// `<output_dir>/<name>_<suffix>`.
pub fn output_path(cfg: &ExperimentConfig, suffix: &str) -> PathBuf {
    cfg.experiment.output_dir.join(format!("{}_{suffix}", cfg.experiment.name))
}

/// Writes the per-iteration metrics CSV and the summary JSON, returning
/// the summary.
pub fn write_experiment(cfg: &ExperimentConfig, res: &ExperimentResult) -> Result<Summary> {
    let rows: Vec<_> = res.algorithms.iter().flat_map(|a| a.records()).collect();
    write_csv(&output_path(cfg, "metrics.csv"), &rows)?;
    let s = summarize(cfg, res);
    write_json(&output_path(cfg, "summary.json"), &s)?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::presets::preset;
    use crate::harness::runner::run_experiment;

    #[test]
    fn files_have_expected_shape() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = preset("default-async", 1.0 / 32.0).unwrap();
        c.model.dim = 8;
        c.model.m = 2;
        c.experiment.mc_runs = 1;
        c.experiment.test_size = 50;
        c.experiment.output_dir = dir.path().to_path_buf();
        let res = run_experiment(&c).unwrap();
        let s = write_experiment(&c, &res).unwrap();
        assert_eq!(s.algorithms.len(), c.algorithms.variants.len());
        let text = fs::read_to_string(output_path(&c, "metrics.csv")).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "algorithm,iteration,mse_test_db,uplink_params,downlink_params");
        assert_eq!(lines.count(), c.experiment.horizon * c.algorithms.variants.len());
        let back: Summary =
            serde_json::from_str(&fs::read_to_string(output_path(&c, "summary.json")).unwrap()).unwrap();
        assert_eq!(back.algorithms.len(), s.algorithms.len());
        assert_eq!(back.runs, 1);
    }
}
