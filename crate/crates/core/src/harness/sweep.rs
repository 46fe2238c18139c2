//! One-parameter sweeps over a base configuration.

use serde::{Deserialize, Serialize};

use crate::analysis::max_eigenvalue;
use crate::error::{Error, Result};

use super::config::ExperimentConfig;
use super::runner::{feature_correlation, run_with_data, DataSource};

pub const SWEEP_PARAMETERS: [&str; 10] =
    ["m", "mu", "tail", "l_max", "alpha_base", "clients", "dim", "horizon", "noise_variance", "kernel_width"];

/// One algorithm at one parameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub parameter: String,
    pub value: f64,
    pub algorithm: String,
    pub mu: f64,
    pub final_mse_db: f64,
    pub comm_ratio: f64,
    /// Whether `mu` lies below `1 / lambda_max(R)`.
    pub stable: bool,
}

fn as_count(name: &str, value: f64) -> Result<usize> {
    if value >= 0.0 && value.fract() == 0.0 && value <= u32::MAX as f64 {
        Ok(value as usize)
    } else {
        Err(Error::invalid(format!("{name} needs a non-negative integer, got {value}")))
    }
}

/// Sets parameter `name` of `cfg` to `value`. `delta` is accepted as an
/// alias of `tail`. `clients` keeps the number of groups fixed.
pub fn apply_parameter(cfg: &mut ExperimentConfig, name: &str, value: f64) -> Result<()> {
    match name {
        "m" => cfg.model.m = as_count(name, value)?,
        "mu" => {
            cfg.algorithms.default_mu = value;
            cfg.algorithms.mu.clear();
        }
        "tail" | "delta" => cfg.delay.tail = value,
        "l_max" => cfg.delay.l_max = as_count(name, value)?,
        "alpha_base" => cfg.algorithms.alpha_base = value,
        "clients" => cfg.clients.count = as_count(name, value)?,
        "dim" => cfg.model.dim = as_count(name, value)?,
        "horizon" => cfg.experiment.horizon = as_count(name, value)?,
        "noise_variance" => cfg.clients.noise_variance = value,
        "kernel_width" => cfg.model.kernel_width = Some(value),
        other => {
            return Err(Error::invalid(format!(
                "unknown sweep parameter `{other}`; expected one of {}",
                SWEEP_PARAMETERS.join(", ")
            )))
        }
    }
    cfg.validate()
}

/// Runs the configured variants once per value of `name`.
pub fn sweep(cfg: &ExperimentConfig, name: &str, values: &[f64]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::invalid("sweep needs at least one value"));
    }
    let data = DataSource::from_config(cfg)?;
    let mut rows = Vec::new();
    for &value in values {
        let mut c = cfg.clone();
        apply_parameter(&mut c, name, value)?;
        let lmax = max_eigenvalue(&feature_correlation(&c, &data)?);
        let res = run_with_data(&c, &data, &c.algorithms.variants)?;
        for a in &res.algorithms {
            rows.push(SweepRow {
                parameter: name.to_string(),
                value,
                algorithm: a.algorithm.to_string(),
                mu: a.mu,
                final_mse_db: a.final_mse_db(),
                comm_ratio: res.comm_ratio(a.algorithm, c.model.dim).unwrap_or(0.0),
                stable: a.mu * lmax < 1.0,
            });
        }
    }
    Ok(rows)
}
