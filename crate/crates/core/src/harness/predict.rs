//! Theoretical MSD of a configured PAO-Fed variant.
//!
//! The extended model assumes every client holds a fresh sample at every
//! iteration. The target is the Wiener solution of the mapped task and the
//! noise is the Wiener residual plus the observation noise.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::algorithms::{AlgorithmId, VariantConfig};
use crate::analysis::{
    gmres, predict_msd, Expectation, ExtendedSystem, Mat, MsdPrediction, SystemConfig, MAX_EXACT_OUTCOMES,
};
use crate::error::{Error, Result};
use crate::rff::FeatureMap;
use crate::rng::{substream, Stream};
use crate::stream::{synth_target, SYNTH_INPUT_DIM};

use super::config::ExperimentConfig;
use super::metrics::to_db;
use super::runner::{feature_map, DataSource};

/// Largest extended state length accepted.
pub const MAX_EXTENDED_DIM: usize = 400;
const DEFAULT_Q_SAMPLES: usize = 100_000;

/// Second-order statistics of the mapped task.
#[derive(Debug, Clone, PartialEq)]
pub struct WienerFit {
    pub correlation: Mat,
    pub w_star: Vec<f64>,
    /// `E[y^2] - p^T w_star`.
    pub residual: f64,
}

/// Estimates `R = E[z z^T]`, `p = E[z y]` and solves `R w = p`.
pub fn wiener_fit(fm: &FeatureMap, inputs: &[Vec<f64>], targets: &[f64]) -> Result<WienerFit> {
    if inputs.is_empty() || inputs.len() != targets.len() {
        return Err(Error::invalid("Wiener fit needs matching non-empty inputs and targets"));
    }
    let d = fm.dim_out();
    let n = inputs.len() as f64;
    let mut r = Mat::zeros(d, d);
    let mut p = vec![0.0; d];
    let mut energy = 0.0;
    let mut z = vec![0.0; d];
    for (x, &y) in inputs.iter().zip(targets) {
        fm.map_into(x, &mut z)?;
        for i in 0..d {
            p[i] += z[i] * y / n;
            for j in 0..d {
                r[(i, j)] += z[i] * z[j] / n;
            }
        }
        energy += y * y / n;
    }
    let sol = gmres(d, |v, out| out.copy_from_slice(&r.mul_vec(v)), &p, 1e-12, d.max(1), 100 * d.max(1))?;
    let fitted: f64 = p.iter().zip(&sol.x).map(|(a, b)| a * b).sum();
    Ok(WienerFit { correlation: r, w_star: sol.x, residual: (energy - fitted).max(0.0) })
}

fn task_samples(cfg: &ExperimentConfig, data: &DataSource) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    match data {
        DataSource::Synthetic => {
            let mut rng = substream(cfg.experiment.seed, Stream::Analysis);
            let xs: Vec<Vec<f64>> = (0..cfg.analysis.correlation_samples)
                .map(|_| (0..SYNTH_INPUT_DIM).map(|_| rng.random_range(-1.0..=1.0)).collect())
                .collect();
            let ys = xs.iter().map(|x| synth_target(x, 0.0)).collect::<Result<Vec<_>>>()?;
            Ok((xs, ys))
        }
        DataSource::Csv(d) => {
            let n = cfg.analysis.correlation_samples.min(d.stream_len());
            Ok((d.stream_inputs()[..n].to_vec(), d.stream_targets()[..n].to_vec()))
        }
    }
}

/// Extended system of `cfg.analysis.variant` together with the Wiener fit.
pub fn build_system(cfg: &ExperimentConfig, data: &DataSource) -> Result<(ExtendedSystem, WienerFit)> {
    let (coordination, version) = match cfg.analysis.variant {
        AlgorithmId::PaoFed { coordination, version } => (coordination, version),
        other => return Err(Error::invalid(format!("MSD analysis covers PAO-Fed variants only, got {other}"))),
    };
    let k = cfg.clients.count;
    let d = cfg.model.dim;
    let n_e = (1 + k * (cfg.delay.l_max + 2)) * d;
    if n_e > MAX_EXTENDED_DIM {
        return Err(Error::invalid(format!(
            "extended state of length {n_e} exceeds {MAX_EXTENDED_DIM}; reduce clients, dim or l_max"
        )));
    }
    let vc = VariantConfig::pao_fed(coordination, version, cfg.algorithms.alpha_base, cfg.delay.l_max)?;
    let fm = feature_map(cfg, data)?;
    let (xs, ys) = task_samples(cfg, data)?;
    let fit = wiener_fit(&fm, &xs, &ys)?;
    let probs = cfg.availability_model()?.probabilities().to_vec();
    let sys = ExtendedSystem::new(SystemConfig {
        clients: k,
        dim: d,
        m: cfg.model.m,
        coordination,
        uplink: vc.uplink,
        full_downlink: cfg.algorithms.full_downlink,
        weights: vc.weights,
        tie_rule: cfg.algorithms.tie_rule,
        delay: cfg.delay_model()?,
        probs,
        correlations: vec![fit.correlation.clone(); k],
        noise: vec![fit.residual + cfg.clients.noise_variance; k],
    })?;
    Ok((sys, fit))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSummary {
    pub variant: String,
    pub extended_dim: usize,
    pub expectation: String,
    pub mu: f64,
    pub effective_noise: f64,
    pub spectral_radius: f64,
    pub steady_state_msd: f64,
    pub steady_state_db: f64,
    pub mu_bound_mean: f64,
    pub mu_bound_ms: f64,
}

/// One row of the transient curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub iteration: usize,
    pub predicted_msd: f64,
    pub predicted_msd_db: f64,
}

/// Transient and steady-state MSD of the configured variant. Expectations
/// are exact when enumeration is feasible and no sample count is set.
pub fn predict(cfg: &ExperimentConfig) -> Result<(MsdPrediction, PredictionSummary)> {
    cfg.validate()?;
    let data = DataSource::from_config(cfg)?;
    let (sys, fit) = build_system(cfg, &data)?;
    let how = match cfg.analysis.q_samples {
        None if sys.exact_outcomes() <= MAX_EXACT_OUTCOMES => Expectation::Exact,
        s => Expectation::MonteCarlo { samples: s.unwrap_or(DEFAULT_Q_SAMPLES), seed: cfg.experiment.seed },
    };
    let mu = cfg.mu_for(cfg.analysis.variant);
    let pred = predict_msd(&sys, mu, &fit.w_star, cfg.analysis.iterations, how, cfg.analysis.second_order)?;
    let summary = PredictionSummary {
        variant: cfg.analysis.variant.to_string(),
        extended_dim: sys.n_e(),
        expectation: match how {
            Expectation::Exact => "exact".to_string(),
            Expectation::MonteCarlo { samples, .. } => format!("monte-carlo ({samples} samples)"),
        },
        mu,
        effective_noise: sys.config().noise[0],
        spectral_radius: pred.spectral_radius,
        steady_state_msd: pred.steady_state,
        steady_state_db: to_db(pred.steady_state),
        mu_bound_mean: pred.mu_bound_mean,
        mu_bound_ms: pred.mu_bound_ms,
    };
    Ok((pred, summary))
}

pub fn prediction_records(pred: &MsdPrediction) -> Vec<PredictionRecord> {
    pred.transient
        .iter()
        .enumerate()
        .map(|(iteration, &v)| PredictionRecord { iteration, predicted_msd: v, predicted_msd_db: to_db(v) })
        .collect()
}
