//! Full-model baselines: Online-Fed and Online-FedSGD.

use rand_chacha::ChaCha8Rng;

use crate::environment::{Delay, InFlightMessage, MessageQueue};
use crate::error::Result;
use crate::rng::{substream, Stream};
use crate::stream::dot;

use super::partial::select_participants;
use super::{check_round, FederatedAlgorithm, Round, Traffic};

/// Participants start from the server model, take one LMS step and upload
/// the whole model; the server replaces its model by the mean of the
/// models arriving at the current iteration.
#[derive(Debug, Clone)]
pub struct OnlineFed {
    label: String,
    mu: f64,
    subset: Option<usize>,
    server: Vec<f64>,
    queue: MessageQueue,
    rng: ChaCha8Rng,
    selected: Vec<bool>,
    mask: Vec<usize>,
}

impl OnlineFed {
    /// `subset = None` lets every available client take part (Online-FedSGD).
    pub fn new(label: impl Into<String>, clients: usize, dim: usize, mu: f64, subset: Option<usize>, seed: u64) -> Self {
        Self {
            label: label.into(),
            mu,
            subset,
            server: vec![0.0; dim],
            queue: MessageQueue::new(),
            rng: substream(seed, Stream::Selection),
            selected: vec![false; clients],
            mask: (0..dim).collect(),
        }
    }

    pub fn subset(&self) -> Option<usize> {
        self.subset
    }
}

/// Arithmetic mean of client models; `None` for an empty slice.
pub fn average_models(models: &[&[f64]]) -> Option<Vec<f64>> {
    let first = models.first()?;
    let mut out = vec![0.0; first.len()];
    for m in models {
        for (o, v) in out.iter_mut().zip(m.iter()) {
            *o += v;
        }
    }
    let inv = 1.0 / models.len() as f64;
    out.iter_mut().for_each(|o| *o *= inv);
    Some(out)
}

impl FederatedAlgorithm for OnlineFed {
    fn label(&self) -> &str {
        &self.label
    }

    fn step(&mut self, round: &Round) -> Result<Traffic> {
        check_round(round, self.selected.len())?;
        let n = round.iteration;
        let dim = self.server.len() as u64;
        let mut traffic = Traffic::default();
        select_participants(round, self.subset, &mut self.rng, &mut self.selected);
        for (k, sample) in round.samples.iter().enumerate() {
            let Some(sample) = sample else { continue };
            if !self.selected[k] {
                continue;
            }
            let gain = self.mu * (sample.y - dot(&self.server, &sample.z));
            let model: Vec<f64> = self.server.iter().zip(&sample.z).map(|(w, z)| w + gain * z).collect();
            traffic.uplink += dim;
            traffic.downlink += dim;
            traffic.participants += 1;
            if let Delay::Steps(l) = round.events[k].delay {
                let msg = InFlightMessage {
                    client_id: k,
                    send_iteration: n,
                    delivery_iteration: n + l,
                    mask: self.mask.clone(),
                    payload: model,
                };
                self.queue.enqueue(msg, n)?;
            }
        }
        let arrived = self.queue.deliver(n);
        let models: Vec<&[f64]> = arrived.iter().map(|m| m.payload.as_slice()).collect();
        if let Some(avg) = average_models(&models) {
            self.server = avg;
        }
        Ok(traffic)
    }

    fn global_model(&self) -> &[f64] {
        &self.server
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_of_models() {
        assert_eq!(average_models(&[&[1.0, 1.0], &[3.0, 3.0]]), Some(vec![2.0, 2.0]));
        assert_eq!(average_models(&[&[0.5, -4.0]]), Some(vec![0.5, -4.0]));
        assert_eq!(average_models(&[]), None);
    }
}
