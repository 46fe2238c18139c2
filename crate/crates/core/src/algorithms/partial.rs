//! Partial-sharing engine behind PAO-Fed and PSO-Fed.

use rand::seq::index;
use rand_chacha::ChaCha8Rng;

use crate::environment::{resolve_conflicts, DelayPartition, Delay, InFlightMessage, MessageQueue, TieRule};
use crate::error::{Error, Result};
use crate::rng::{substream, Stream};

use super::aggregation::{accumulate_deviation, AggregationWeights};
use super::local::ClientState;
use super::masks::{Coordination, MaskScheduler, SelectionMask, UplinkRule};
use super::{check_round, FederatedAlgorithm, Round, Traffic};

/// Behavioural switches of the partial-sharing engine.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantConfig {
    pub coordination: Coordination,
    pub uplink: UplinkRule,
    pub weights: AggregationWeights,
    /// Clients with data that do not take part still refine their models.
    pub autonomous: bool,
    /// Send the whole server model on the downlink.
    pub full_downlink: bool,
    pub tie_rule: TieRule,
    /// Clients drawn per iteration from the available pool; `None` keeps all.
    pub subset: Option<usize>,
    /// When false every arrival is aggregated as if it were fresh.
    pub staleness_aware: bool,
}

impl VariantConfig {
    /// Version 0 echoes the received portion with flat weights, version 1
    /// sends the next portion with flat weights, version 2 adds
    /// `alpha_l = alpha_base^l`.
    pub fn pao_fed(coordination: Coordination, version: u8, alpha_base: f64, l_max: usize) -> Result<Self> {
        let (uplink, weights) = match version {
            0 => (UplinkRule::Echo, AggregationWeights::flat(l_max)),
            1 => (UplinkRule::Shifted, AggregationWeights::flat(l_max)),
            2 => (UplinkRule::Shifted, AggregationWeights::decreasing(alpha_base, l_max)?),
            v => return Err(Error::invalid(format!("unknown PAO-Fed version {v}"))),
        };
        Ok(Self {
            coordination,
            uplink,
            weights,
            autonomous: true,
            full_downlink: false,
            tie_rule: TieRule::KeepAll,
            subset: None,
            staleness_aware: true,
        })
    }

    pub fn pso_fed(subset: usize, l_max: usize) -> Self {
        Self {
            coordination: Coordination::Coordinated,
            uplink: UplinkRule::Shifted,
            weights: AggregationWeights::flat(l_max),
            autonomous: true,
            full_downlink: false,
            tie_rule: TieRule::KeepAll,
            subset: Some(subset),
            staleness_aware: false,
        }
    }
}

/// Server, clients and in-flight queue of one partial-sharing run.
#[derive(Debug, Clone)]
pub struct PartialSharing {
    label: String,
    cfg: VariantConfig,
    sched: MaskScheduler,
    server: Vec<f64>,
    clients: Vec<ClientState>,
    queue: MessageQueue,
    rng: ChaCha8Rng,
    acc: Vec<f64>,
    selected: Vec<bool>,
}

impl PartialSharing {
    pub fn new(
        label: impl Into<String>,
        clients: usize,
        dim: usize,
        m: usize,
        mu: f64,
        cfg: VariantConfig,
        seed: u64,
    ) -> Result<Self> {
        let sched = MaskScheduler::new(dim, m, cfg.coordination)?;
        Ok(Self {
            label: label.into(),
            cfg,
            sched,
            server: vec![0.0; dim],
            clients: (0..clients).map(|_| ClientState::new(dim, mu)).collect::<Result<_>>()?,
            queue: MessageQueue::new(),
            rng: substream(seed, Stream::Selection),
            acc: vec![0.0; dim],
            selected: vec![false; clients],
        })
    }

    pub fn client_models(&self) -> impl Iterator<Item = &[f64]> {
        self.clients.iter().map(|c| c.model.as_slice())
    }

    pub fn scheduler(&self) -> &MaskScheduler {
        &self.sched
    }

    pub fn config(&self) -> &VariantConfig {
        &self.cfg
    }

    pub fn in_flight(&self) -> usize {
        self.queue.in_flight()
    }
}

/// Marks the clients taking part: every available client with data, or a
/// uniform draw of `subset` of them.
pub(crate) fn select_participants(
    round: &Round,
    subset: Option<usize>,
    rng: &mut ChaCha8Rng,
    selected: &mut [bool],
) {
    for (s, ev) in selected.iter_mut().zip(round.events) {
        *s = ev.available && ev.has_data;
    }
    let Some(s) = subset else { return };
    let pool: Vec<usize> = (0..selected.len()).filter(|&k| selected[k]).collect();
    if pool.len() <= s {
        return;
    }
    selected.iter_mut().for_each(|x| *x = false);
    for i in index::sample(rng, pool.len(), s) {
        selected[pool[i]] = true;
    }
}

impl FederatedAlgorithm for PartialSharing {
    fn label(&self) -> &str {
        &self.label
    }

    fn step(&mut self, round: &Round) -> Result<Traffic> {
        check_round(round, self.clients.len())?;
        let n = round.iteration;
        let mut traffic = Traffic::default();
        select_participants(round, self.cfg.subset, &mut self.rng, &mut self.selected);

        for (k, client) in self.clients.iter_mut().enumerate() {
            let Some(sample) = &round.samples[k] else { continue };
            if self.selected[k] {
                let down = if self.cfg.full_downlink {
                    SelectionMask::full(self.sched.dim())
                } else {
                    self.sched.downlink(k, n)
                };
                let up = self.sched.uplink(self.cfg.uplink, k, n);
                let payload = client.step_available(&self.server, &down, &up, sample)?;
                traffic.uplink += up.len() as u64;
                traffic.downlink += down.len() as u64;
                traffic.participants += 1;
                if let Delay::Steps(l) = round.events[k].delay {
                    let msg = InFlightMessage {
                        client_id: k,
                        send_iteration: n,
                        delivery_iteration: n + l,
                        mask: up.indices(),
                        payload,
                    };
                    self.queue.enqueue(msg, n)?;
                }
            } else if self.cfg.autonomous {
                client.step_autonomous(sample)?;
            }
        }

        let mut arrived = self.queue.deliver(n);
        if !self.cfg.staleness_aware {
            arrived = DelayPartition::from_messages(
                arrived.iter().cloned().map(|m| InFlightMessage { send_iteration: n, delivery_iteration: n, ..m }),
            );
        }
        let resolved = resolve_conflicts(&arrived, self.cfg.tie_rule);
        self.acc.iter_mut().for_each(|a| *a = 0.0);
        for l in 0..resolved.depth() {
            accumulate_deviation(resolved.group(l), &self.server, self.cfg.weights.alpha(l), &mut self.acc);
        }
        for (w, a) in self.server.iter_mut().zip(&self.acc) {
            *w += a;
        }
        Ok(traffic)
    }

    fn global_model(&self) -> &[f64] {
        &self.server
    }
}
