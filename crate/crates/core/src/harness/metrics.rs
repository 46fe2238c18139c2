//! Test-set MSE and per-iteration metric records.

use serde::{Deserialize, Serialize};

use crate::stream::TestSet;

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub algorithm: String,
    pub iteration: usize,
    pub mse_test_db: f64,
    pub uplink_params: u64,
    pub downlink_params: u64,
}

pub fn to_db(x: f64) -> f64 {
    10.0 * x.max(f64::MIN_POSITIVE).log10()
}

/// `||y - Z^T w||^2 / T`, evaluated row by row.
pub fn mse_test(w: &[f64], test: &TestSet) -> f64 {
    if test.is_empty() {
        return 0.0;
    }
    let sse: f64 = test
        .mapped_rows()
        .zip(test.targets())
        .map(|(z, y)| (y - z.iter().zip(w).map(|(a, b)| a * b).sum::<f64>()).powi(2))
        .sum();
    sse / test.len() as f64
}

/// Same value as [`mse_test`] from precomputed Gram statistics, so one
/// evaluation costs `O(D^2)` instead of `O(T D)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MseEvaluator {
    dim: usize,
    gram: Vec<f64>,
    cross: Vec<f64>,
    energy: f64,
}

impl MseEvaluator {
    pub fn new(test: &TestSet) -> Self {
        let d = test.dim();
        let t = test.len().max(1) as f64;
        let mut gram = vec![0.0; d * d];
        let mut cross = vec![0.0; d];
        let mut energy = 0.0;
        for (z, &y) in test.mapped_rows().zip(test.targets()) {
            for i in 0..d {
                cross[i] += z[i] * y / t;
                for j in i..d {
                    gram[i * d + j] += z[i] * z[j] / t;
                }
            }
            energy += y * y / t;
        }
        for i in 0..d {
            for j in 0..i {
                gram[i * d + j] = gram[j * d + i];
            }
        }
        Self { dim: d, gram, cross, energy }
    }

    pub fn eval(&self, w: &[f64]) -> f64 {
        let d = self.dim;
        let mut quad = 0.0;
        for i in 0..d {
            let row = &self.gram[i * d..(i + 1) * d];
            quad += w[i] * row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
        }
        let lin: f64 = self.cross.iter().zip(w).map(|(a, b)| a * b).sum();
        (self.energy - 2.0 * lin + quad).max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rff::FeatureMap;
    use crate::stream::build_test_set;

    fn unit_map() -> FeatureMap {
        // zero frequencies and phases: every feature equals sqrt(2 / D)
        FeatureMap::from_parts(vec![vec![0.0]; 2], vec![0.0; 2], 1.0).unwrap()
    }

    #[test]
    fn examples() {
        let fm = unit_map();
        let t = TestSet::new(&fm, vec![vec![0.0], vec![0.0]], vec![1.0, 1.0]).unwrap();
        assert_eq!(mse_test(&[0.0, 0.0], &t), 1.0);
        // z = (1, 1), so w = (0.5, 0.5) predicts 1 exactly
        assert!(mse_test(&[0.5, 0.5], &t) < 1e-30);
        let t = TestSet::new(&fm, vec![vec![0.0], vec![0.0]], vec![1.0, -1.0]).unwrap();
        assert_eq!(mse_test(&[0.0, 0.0], &t), 1.0);
    }

    #[test]
    fn gram_form_matches_direct() {
        let fm = FeatureMap::new(3, 4, 12, 1.0).unwrap();
        let t = build_test_set(&fm, 300, 4).unwrap();
        let e = MseEvaluator::new(&t);
        let w: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let (a, b) = (e.eval(&w), mse_test(&w, &t));
        assert!((a - b).abs() < 1e-12 * b.max(1.0));
        assert!((e.eval(&[0.0; 12]) - mse_test(&[0.0; 12], &t)).abs() < 1e-12);
    }

    #[test]
    fn db_scale() {
        assert_eq!(to_db(1.0), 0.0);
        assert!((to_db(0.01) + 20.0).abs() < 1e-12);
        assert!(to_db(0.0).is_finite());
    }
}
