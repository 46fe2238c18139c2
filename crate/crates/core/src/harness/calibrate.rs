//! Learning-rate calibration to a common initial convergence speed.
//!
//! Speed is the first iteration at which the averaged MSE-test is 3 dB
//! below its initial value. Every algorithm gets the grid value whose drop
//! iteration is closest to the reference algorithm's.

use serde::{Deserialize, Serialize};

use crate::algorithms::AlgorithmId;
use crate::error::{Error, Result};

use super::config::ExperimentConfig;
use super::runner::{run_with_data, DataSource};

pub const DROP_DB: f64 = 3.0;
/// Accepted relative mismatch of drop iterations.
pub const TOLERANCE: f64 = 0.1;

/// First iteration whose value lies `drop` dB below the first entry.
pub fn drop_iteration(mse_db: &[f64], drop: f64) -> Option<usize> {
    let start = *mse_db.first()?;
    mse_db.iter().position(|&v| v <= start - drop)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub algorithm: String,
    pub mu: f64,
    pub drop_iteration: Option<usize>,
    pub target: usize,
    /// Drop iteration within [`TOLERANCE`] of the target.
    pub matched: bool,
}

/// Calibrates every configured variant other than `reference` over
/// `grid`, writes the chosen rates into `cfg` and returns one entry per
/// variant, the reference included.
pub fn calibrate(cfg: &mut ExperimentConfig, reference: AlgorithmId, grid: &[f64]) -> Result<Vec<Calibration>> {
    if grid.is_empty() || grid.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
        return Err(Error::invalid("calibration grid needs positive finite learning rates"));
    }
    let data = DataSource::from_config(cfg)?;
    let res = run_with_data(cfg, &data, &[reference])?;
    let target = drop_iteration(&res.algorithms[0].mse_db(), DROP_DB).ok_or_else(|| {
        Error::invalid(format!("reference {reference} never drops {DROP_DB} dB within the horizon"))
    })?;
    let mut out = vec![Calibration {
        algorithm: reference.to_string(),
        mu: cfg.mu_for(reference),
        drop_iteration: Some(target),
        target,
        matched: true,
    }];
    let ids: Vec<AlgorithmId> = cfg.algorithms.variants.iter().copied().filter(|&id| id != reference).collect();
    let mut best: Vec<Option<(f64, Option<usize>, f64)>> = vec![None; ids.len()];
    for &mu in grid {
        let mut c = cfg.clone();
        for &id in &ids {
            c.set_mu(id, mu);
        }
        let r = run_with_data(&c, &data, &ids)?;
        for (b, a) in best.iter_mut().zip(&r.algorithms) {
            let it = drop_iteration(&a.mse_db(), DROP_DB);
            let gap = it.map_or(f64::INFINITY, |i| (i as f64 - target as f64).abs());
            if b.as_ref().is_none_or(|(g, _, _)| gap < *g) {
                *b = Some((gap, it, mu));
            }
        }
    }
    for (&id, b) in ids.iter().zip(best) {
        let (gap, it, mu) = b.expect("grid is not empty");
        cfg.set_mu(id, mu);
        out.push(Calibration {
            algorithm: id.to_string(),
            mu,
            drop_iteration: it,
            target,
            matched: gap <= TOLERANCE * target as f64,
        });
    }
    Ok(out)
}

/// `count` log-spaced rates from `lo` to `hi`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count).map(|i| lo * (hi / lo).powf(i as f64 / (count - 1) as f64)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::presets::preset;

    #[test]
    fn drop_examples() {
        assert_eq!(drop_iteration(&[0.0, -1.0, -3.0, -5.0], 3.0), Some(2));
        assert_eq!(drop_iteration(&[0.0, -1.0], 3.0), None);
        assert_eq!(drop_iteration(&[], 3.0), None);
    }

    #[test]
    fn grid_endpoints() {
        let g = log_grid(0.01, 1.0, 3);
        assert!((g[0] - 0.01).abs() < 1e-15 && (g[1] - 0.1).abs() < 1e-12 && (g[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reference_against_itself_matches_exactly() {
        let mut c = preset("ideal", 1.0 / 32.0).unwrap();
        c.model.dim = 16;
        c.model.m = 4;
        c.experiment.mc_runs = 2;
        c.experiment.test_size = 100;
        c.algorithms.variants = vec![AlgorithmId::OnlineFedSgd, AlgorithmId::OnlineFed];
        c.algorithms.subset = Some(c.clients.count);
        c.algorithms.default_mu = 0.3;
        // with every client sampled, Online-Fed is Online-FedSGD, so the
        // reference rate is on the grid and reproduces the target
        let cal = calibrate(&mut c, AlgorithmId::OnlineFedSgd, &[0.05, 0.3, 0.9]).unwrap();
        assert_eq!(cal.len(), 2);
        assert!(cal[1].matched);
        assert_eq!(cal[1].mu, 0.3);
        assert_eq!(c.mu_for(AlgorithmId::OnlineFed), 0.3);
    }
}
