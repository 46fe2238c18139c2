//! Asynchronous client environment: Bernoulli availability, geometric
//! uplink delays with a cutoff, the in-flight message queue and the
//! resolution of coordinates claimed by several delivered updates.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::{substream, Stream};

/// Per-client participation probabilities, constant over time.
#[derive(Debug, Clone, PartialEq)]
pub struct AvailabilityModel {
    probs: Vec<f64>,
}

impl AvailabilityModel {
    pub fn per_client(probs: Vec<f64>) -> Result<Self> {
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::invalid(format!("availability {p} outside [0, 1]")));
        }
        Ok(Self { probs })
    }

    pub fn constant(p: f64, clients: usize) -> Result<Self> {
        Self::per_client(vec![p; clients])
    }

    /// Splits each of `data_groups` equal blocks of clients into
    /// `probs.len()` availability groups, group `j` getting `probs[j]`.
    pub fn grouped(clients: usize, data_groups: usize, probs: &[f64]) -> Result<Self> {
        if data_groups == 0 || clients % data_groups != 0 || probs.is_empty() {
            return Err(Error::invalid(format!(
                "{clients} clients cannot be split into {data_groups} data groups"
            )));
        }
        let per_group = clients / data_groups;
        let p = (0..clients)
            .map(|k| probs[(k % per_group) * probs.len() / per_group])
            .collect();
        Self::per_client(p)
    }

    pub fn clients(&self) -> usize {
        self.probs.len()
    }

    /// `p_{k,n}`; zero whenever the client has no fresh sample.
    pub fn probability(&self, client: usize, _iteration: usize, has_data: bool) -> f64 {
        if has_data {
            self.probs[client]
        } else {
            0.0
        }
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }
}

/// One Bernoulli participation trial.
pub fn sample_availability(
    am: &AvailabilityModel,
    client: usize,
    iteration: usize,
    has_data: bool,
    rng: &mut impl Rng,
) -> bool {
    let u: f64 = rng.random();
    u < am.probability(client, iteration, has_data)
}

/// Outcome of a delay draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Delay {
    Steps(usize),
    /// Exceeded the cutoff; the update never reaches the server.
    Discarded,
}

impl Delay {
    pub fn steps(self) -> Option<usize> {
        match self {
            Delay::Steps(l) => Some(l),
            Delay::Discarded => None,
        }
    }
}

/// Geometric delays in units of `step`, truncated at `cutoff`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayModel {
    tail: f64,
    cutoff: usize,
    step: usize,
}

impl DelayModel {
    pub fn new(tail: f64, cutoff: usize, step: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&tail) {
            return Err(Error::invalid(format!("delay tail {tail} outside [0, 1)")));
        }
        if step == 0 {
            return Err(Error::invalid("delay step must be positive"));
        }
        Ok(Self { tail, cutoff, step })
    }

    pub fn none() -> Self {
        Self { tail: 0.0, cutoff: 0, step: 1 }
    }

    pub fn tail(&self) -> f64 {
        self.tail
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn step(&self) -> usize {
        self.step
    }

    /// Maps one uniform draw in `[0, 1)` to a delay by inverting the
    /// survival function `P(delay >= l) = tail^(l / step)`.
    pub fn delay_from_uniform(&self, u: f64) -> Delay {
        if self.tail == 0.0 {
            return Delay::Steps(0);
        }
        // 1 - u lies in (0, 1]
        let g = ((1.0 - u).ln() / self.tail.ln()).floor();
        let max_units = self.cutoff / self.step;
        if g > max_units as f64 {
            Delay::Discarded
        } else {
            Delay::Steps(g as usize * self.step)
        }
    }

    /// `P(delay >= l)`, counting discarded updates as longer than any `l`.
    pub fn survival(&self, l: usize) -> f64 {
        self.tail.powi(l.div_ceil(self.step) as i32)
    }

    /// Probability that a sent update arrives with delay exactly `l`.
    pub fn pmf(&self, l: usize) -> f64 {
        if l > self.cutoff || l % self.step != 0 {
            return 0.0;
        }
        let j = (l / self.step) as i32;
        (1.0 - self.tail) * self.tail.powi(j)
    }
}

pub fn sample_delay(dm: &DelayModel, rng: &mut impl Rng) -> Delay {
    dm.delay_from_uniform(rng.random())
}

/// A masked model update travelling from a client to the server.
#[derive(Debug, Clone, PartialEq)]
pub struct InFlightMessage {
    pub client_id: usize,
    pub send_iteration: usize,
    pub delivery_iteration: usize,
    /// Model coordinates carried, in increasing order.
    pub mask: Vec<usize>,
    /// Values of the client model at `mask`.
    pub payload: Vec<f64>,
}

impl InFlightMessage {
    pub fn delay(&self) -> usize {
        self.delivery_iteration - self.send_iteration
    }
}

/// Messages delivered at one iteration, grouped by delay: entry `l` is
/// the set `K_{n,l}`, sorted by client id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DelayPartition {
    groups: Vec<Vec<InFlightMessage>>,
}

impl DelayPartition {
    pub fn from_messages(msgs: impl IntoIterator<Item = InFlightMessage>) -> Self {
        let mut groups: Vec<Vec<InFlightMessage>> = Vec::new();
        for m in msgs {
            let l = m.delay();
            if groups.len() <= l {
                groups.resize_with(l + 1, Vec::new);
            }
            groups[l].push(m);
        }
        for g in &mut groups {
            g.sort_by_key(|m| m.client_id);
        }
        Self { groups }
    }

    /// `K_{n,l}`; empty beyond the largest observed delay.
    pub fn group(&self, l: usize) -> &[InFlightMessage] {
        self.groups.get(l).map_or(&[], Vec::as_slice)
    }

    /// One past the largest delay present.
    pub fn depth(&self) -> usize {
        self.groups.len()
    }

    pub fn len(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &InFlightMessage> {
        self.groups.iter().flatten()
    }
}

/// Messages keyed by delivery iteration.
#[derive(Debug, Clone, Default)]
pub struct MessageQueue {
    pending: BTreeMap<usize, Vec<InFlightMessage>>,
}

impl MessageQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn enqueue(&mut self, msg: InFlightMessage, current_iteration: usize) -> Result<()> {
        if msg.delivery_iteration < current_iteration || msg.delivery_iteration < msg.send_iteration {
            return Err(Error::invalid(format!(
                "message due at {} cannot be queued at iteration {current_iteration}",
                msg.delivery_iteration
            )));
        }
        if msg.mask.len() != msg.payload.len() {
            return Err(Error::invalid("mask and payload lengths differ"));
        }
        self.pending.entry(msg.delivery_iteration).or_default().push(msg);
        Ok(())
    }

    /// Removes and returns every message due at `iteration`.
    pub fn deliver(&mut self, iteration: usize) -> DelayPartition {
        DelayPartition::from_messages(self.pending.remove(&iteration).unwrap_or_default())
    }

    pub fn in_flight(&self) -> usize {
        self.pending.values().map(Vec::len).sum()
    }
}

/// How a coordinate claimed by several updates with the same delay is settled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieRule {
    /// Every update at the most recent delay keeps the coordinate, so it is
    /// averaged over them.
    #[default]
    KeepAll,
    /// Only the lowest client id at the most recent delay keeps it.
    LowestClientId,
}

/// Keeps each coordinate only in the most recently sent updates, then drops
/// updates left with an empty mask.
pub fn resolve_conflicts(part: &DelayPartition, tie: TieRule) -> DelayPartition {
    let mut claimed: HashSet<usize> = HashSet::new();
    let mut groups = Vec::with_capacity(part.groups.len());
    for group in &part.groups {
        let mut kept = Vec::with_capacity(group.len());
        let mut fresh: Vec<usize> = Vec::new();
        for msg in group {
            let (mask, payload): (Vec<usize>, Vec<f64>) = msg
                .mask
                .iter()
                .zip(&msg.payload)
                .filter(|(j, _)| !claimed.contains(j))
                .map(|(&j, &v)| (j, v))
                .unzip();
            if mask.is_empty() {
                continue;
            }
            match tie {
                TieRule::KeepAll => fresh.extend(&mask),
                TieRule::LowestClientId => claimed.extend(&mask),
            }
            kept.push(InFlightMessage { mask, payload, ..msg.clone() });
        }
        claimed.extend(fresh);
        groups.push(kept);
    }
    DelayPartition { groups }
}

/// What happened to one client at one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClientEvent {
    pub has_data: bool,
    pub available: bool,
    /// Delay an update sent this iteration would suffer.
    pub delay: Delay,
}

/// Per-run availability and delay draws. Every client consumes one
/// availability and one delay draw per iteration whether or not it has data,
/// so the trace depends only on the seed and never on the algorithm.
#[derive(Debug, Clone)]
pub struct Environment {
    availability: AvailabilityModel,
    delay: DelayModel,
    avail_rng: ChaCha8Rng,
    delay_rng: ChaCha8Rng,
}

impl Environment {
    pub fn new(availability: AvailabilityModel, delay: DelayModel, seed: u64) -> Self {
        Self {
            availability,
            delay,
            avail_rng: substream(seed, Stream::Availability),
            delay_rng: substream(seed, Stream::Delay),
        }
    }

    pub fn clients(&self) -> usize {
        self.availability.clients()
    }

    pub fn delay_model(&self) -> &DelayModel {
        &self.delay
    }

    pub fn availability(&self) -> &AvailabilityModel {
        &self.availability
    }

    pub fn draw_round(&mut self, iteration: usize, has_data: &[bool], out: &mut [ClientEvent]) {
        for (k, (ev, &data)) in out.iter_mut().zip(has_data).enumerate() {
            let available =
                sample_availability(&self.availability, k, iteration, data, &mut self.avail_rng);
            let delay = sample_delay(&self.delay, &mut self.delay_rng);
            *ev = ClientEvent { has_data: data, available, delay };
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub client: usize,
    pub event: &'static str,
    pub delay: Option<usize>,
}

/// Event log for debugging; only clients holding data are recorded.
#[derive(Debug, Clone, Default)]
pub struct EventTrace {
    rows: Vec<TraceRow>,
}

impl EventTrace {
    pub fn record(&mut self, iteration: usize, events: &[ClientEvent]) {
        for (client, ev) in events.iter().enumerate().filter(|(_, e)| e.has_data) {
            let (event, delay) = match (ev.available, ev.delay) {
                (false, _) => ("idle", None),
                (true, Delay::Steps(l)) => ("sent", Some(l)),
                (true, Delay::Discarded) => ("discarded", None),
            };
            self.rows.push(TraceRow { iteration, client, event, delay });
        }
    }

    pub fn rows(&self) -> &[TraceRow] {
        &self.rows
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wr.serialize(r)?;
        }
        wr.flush()?;
        Ok(())
    }
}
