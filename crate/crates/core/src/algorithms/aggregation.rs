//! Server-side deviation averaging and weighted aggregation.

use serde::{Deserialize, Serialize};

use crate::environment::InFlightMessage;
use crate::error::{Error, Result};

/// Weights `alpha_l` for updates delayed by `l` iterations, zero past the
/// cutoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationWeights {
    alphas: Vec<f64>,
}

impl AggregationWeights {
    pub fn new(alphas: Vec<f64>) -> Result<Self> {
        if alphas.first() != Some(&1.0) {
            return Err(Error::invalid("alpha_0 must equal 1"));
        }
        if let Some(a) = alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::invalid(format!("weight {a} outside [0, 1]")));
        }
        Ok(Self { alphas })
    }

    pub fn flat(l_max: usize) -> Self {
        Self { alphas: vec![1.0; l_max + 1] }
    }

    /// `alpha_l = base^l`.
    pub fn decreasing(base: f64, l_max: usize) -> Result<Self> {
        Self::new((0..=l_max).map(|l| base.powi(l as i32)).collect())
    }

    pub fn alpha(&self, l: usize) -> f64 {
        self.alphas.get(l).copied().unwrap_or(0.0)
    }

    pub fn l_max(&self) -> usize {
        self.alphas.len() - 1
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.alphas
    }
}

/// Adds `alpha / |group| * sum_k S_k (w_k - w_n)` to `acc`.
pub fn accumulate_deviation(group: &[InFlightMessage], server: &[f64], alpha: f64, acc: &mut [f64]) {
    if group.is_empty() || alpha == 0.0 {
        return;
    }
    let scale = alpha / group.len() as f64;
    for msg in group {
        for (&j, &v) in msg.mask.iter().zip(&msg.payload) {
            acc[j] += scale * (v - server[j]);
        }
    }
}

/// `Delta_{n,l}` for one delay group; zero when the group is empty.
pub fn compute_deviation(group: &[InFlightMessage], server: &[f64]) -> Vec<f64> {
    let mut d = vec![0.0; server.len()];
    accumulate_deviation(group, server, 1.0, &mut d);
    d
}

/// `w_{n+1} = w_n + sum_l alpha_l Delta_{n,l}`, `deltas[l]` holding `Delta_{n,l}`.
pub fn server_aggregate(server: &[f64], deltas: &[Vec<f64>], weights: &AggregationWeights) -> Vec<f64> {
    let mut w = server.to_vec();
    for (l, d) in deltas.iter().enumerate() {
        let a = weights.alpha(l);
        if a != 0.0 {
            for (wi, di) in w.iter_mut().zip(d) {
                *wi += a * di;
            }
        }
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msg(client: usize, mask: &[usize], payload: &[f64]) -> InFlightMessage {
        InFlightMessage {
            client_id: client,
            send_iteration: 0,
            delivery_iteration: 0,
            mask: mask.to_vec(),
            payload: payload.to_vec(),
        }
    }

    #[test]
    fn empty_group_gives_zero() {
        assert_eq!(compute_deviation(&[], &[1.0, 2.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn payload_equal_to_server_gives_zero() {
        assert_eq!(compute_deviation(&[msg(0, &[1], &[2.0])], &[1.0, 2.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn two_clients_hand_example() {
        let d = compute_deviation(&[msg(0, &[0], &[3.0]), msg(1, &[1], &[5.0])], &[1.0, 1.0]);
        assert_eq!(d, vec![1.0, 2.0]);
    }

    #[test]
    fn aggregation_cases() {
        let w = vec![0.5, -0.5];
        let flat = AggregationWeights::flat(3);
        assert_eq!(server_aggregate(&w, &[vec![0.0; 2], vec![0.0; 2]], &flat), w);

        let wk = [2.0, 3.0];
        let d = compute_deviation(&[msg(0, &[0, 1], &wk)], &w);
        assert_eq!(server_aggregate(&w, &[d], &flat), wk.to_vec());

        let dec = AggregationWeights::decreasing(0.2, 10).unwrap();
        let mut deltas = vec![vec![0.0; 2]; 4];
        deltas[3][1] = 1.0;
        let out = server_aggregate(&[0.0, 0.0], &deltas, &dec);
        assert!((out[1] - 0.008).abs() < 1e-15);
        assert_eq!(out[0], 0.0);
        assert_eq!(dec.alpha(11), 0.0);
    }

    #[test]
    fn weights_validated() {
        assert!(AggregationWeights::new(vec![0.5]).is_err());
        assert!(AggregationWeights::new(vec![1.0, 1.5]).is_err());
        assert!(AggregationWeights::decreasing(1.2, 2).is_err());
    }
}
