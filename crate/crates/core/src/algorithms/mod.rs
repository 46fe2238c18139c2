//! Online federated learning algorithms: PAO-Fed in its six variants,
//! Online-Fed, Online-FedSGD and PSO-Fed.
//!
//! Every algorithm consumes the same per-iteration [`Round`] (samples plus
//! environment events), so competing methods can be driven by one shared
//! environment trace.

pub mod aggregation;
pub mod local;
pub mod masks;
pub mod online_fed;
pub mod partial;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::environment::{ClientEvent, TieRule};
use crate::error::{Error, Result};
use crate::stream::Sample;

pub use aggregation::{compute_deviation, server_aggregate, AggregationWeights};
pub use local::{client_step_autonomous, client_step_available, ClientState};
pub use masks::{advance_masks, uplink_mask, Coordination, MaskScheduler, SelectionMask, UplinkRule};
pub use online_fed::OnlineFed;
pub use partial::{PartialSharing, VariantConfig};

/// Everything an algorithm sees at one iteration.
#[derive(Debug, Clone, Copy)]
pub struct Round<'a> {
    pub iteration: usize,
    pub samples: &'a [Option<Sample>],
    pub events: &'a [ClientEvent],
}

/// Scalars exchanged during one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Traffic {
    pub uplink: u64,
    pub downlink: u64,
    pub participants: u64,
}

pub trait FederatedAlgorithm: Send {
    fn label(&self) -> &str;
    /// Runs iteration `round.iteration`: client updates, uplink, delivery
    /// and aggregation.
    fn step(&mut self, round: &Round) -> Result<Traffic>;
    fn global_model(&self) -> &[f64];
}

pub(crate) fn check_round(round: &Round, clients: usize) -> Result<()> {
    if round.samples.len() != clients || round.events.len() != clients {
        return Err(Error::invalid(format!(
            "round carries {} samples and {} events for {clients} clients",
            round.samples.len(),
            round.events.len()
        )));
    }
    Ok(())
}

/// Named algorithm variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum AlgorithmId {
    PaoFed { coordination: Coordination, version: u8 },
    OnlineFed,
    OnlineFedSgd,
    PsoFed,
}

impl AlgorithmId {
    pub fn all() -> Vec<AlgorithmId> {
        let mut v = Vec::new();
        for coordination in [Coordination::Coordinated, Coordination::Uncoordinated] {
            for version in 0..=2 {
                v.push(AlgorithmId::PaoFed { coordination, version });
            }
        }
        v.extend([AlgorithmId::OnlineFed, AlgorithmId::OnlineFedSgd, AlgorithmId::PsoFed]);
        v
    }

    pub fn is_pao_fed(&self) -> bool {
        matches!(self, AlgorithmId::PaoFed { .. })
    }

    /// True for algorithms exchanging the whole model.
    pub fn is_full_model(&self) -> bool {
        matches!(self, AlgorithmId::OnlineFed | AlgorithmId::OnlineFedSgd)
    }
}

impl fmt::Display for AlgorithmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AlgorithmId::PaoFed { coordination, version } => {
                let c = match coordination {
                    Coordination::Coordinated => 'c',
                    Coordination::Uncoordinated => 'u',
                };
                write!(f, "pao-fed-{c}{version}")
            }
            AlgorithmId::OnlineFed => f.write_str("online-fed"),
            AlgorithmId::OnlineFedSgd => f.write_str("online-fedsgd"),
            AlgorithmId::PsoFed => f.write_str("pso-fed"),
        }
    }
}

impl FromStr for AlgorithmId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "online-fed" => return Ok(AlgorithmId::OnlineFed),
            "online-fedsgd" => return Ok(AlgorithmId::OnlineFedSgd),
            "pso-fed" => return Ok(AlgorithmId::PsoFed),
            _ => {}
        }
        let bad = || Error::invalid(format!("unknown algorithm `{s}`"));
        let rest = s.strip_prefix("pao-fed-").ok_or_else(bad)?;
        let mut chars = rest.chars();
        let coordination = match chars.next() {
            Some('c') => Coordination::Coordinated,
            Some('u') => Coordination::Uncoordinated,
            _ => return Err(bad()),
        };
        let version = match (chars.next(), chars.next()) {
            (Some(d @ '0'..='2'), None) => d as u8 - b'0',
            _ => return Err(bad()),
        };
        Ok(AlgorithmId::PaoFed { coordination, version })
    }
}

impl TryFrom<String> for AlgorithmId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<AlgorithmId> for String {
    fn from(id: AlgorithmId) -> String {
        id.to_string()
    }
}

/// Shared hyperparameters used to instantiate any algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmParams {
    pub clients: usize,
    pub dim: usize,
    pub m: usize,
    pub mu: f64,
    pub l_max: usize,
    pub alpha_base: f64,
    pub full_downlink: bool,
    /// Participants per iteration for Online-Fed and PSO-Fed; defaults to
    /// [`budget_matched_subset`].
    pub subset: Option<usize>,
    pub tie_rule: TieRule,
}

/// `ceil(K m / D)`: the number of full-model participants whose traffic
/// matches `K` partial-sharing participants.
pub fn budget_matched_subset(clients: usize, m: usize, dim: usize) -> usize {
    (clients * m).div_ceil(dim)
}

pub fn build_algorithm(id: AlgorithmId, p: &AlgorithmParams, seed: u64) -> Result<Box<dyn FederatedAlgorithm>> {
    if !(p.mu > 0.0 && p.mu.is_finite()) {
        return Err(Error::invalid(format!("learning rate must be positive, got {}", p.mu)));
    }
    let subset = p.subset.unwrap_or_else(|| budget_matched_subset(p.clients, p.m, p.dim));
    let label = id.to_string();
    Ok(match id {
        AlgorithmId::PaoFed { coordination, version } => {
            let mut cfg = VariantConfig::pao_fed(coordination, version, p.alpha_base, p.l_max)?;
            cfg.full_downlink = p.full_downlink;
            cfg.tie_rule = p.tie_rule;
            Box::new(PartialSharing::new(label, p.clients, p.dim, p.m, p.mu, cfg, seed)?)
        }
        AlgorithmId::PsoFed => {
            let mut cfg = VariantConfig::pso_fed(subset, p.l_max);
            cfg.tie_rule = p.tie_rule;
            Box::new(PartialSharing::new(label, p.clients, p.dim, p.m, p.mu, cfg, seed)?)
        }
        AlgorithmId::OnlineFed => Box::new(OnlineFed::new(label, p.clients, p.dim, p.mu, Some(subset), seed)),
        AlgorithmId::OnlineFedSgd => Box::new(OnlineFed::new(label, p.clients, p.dim, p.mu, None, seed)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{AvailabilityModel, Delay, DelayModel, Environment};
    use crate::rff::FeatureMap;
    use crate::stream::{build_stream_plan, MappedStream, SampleSource, StreamConfig};

    fn params(clients: usize, dim: usize, m: usize) -> AlgorithmParams {
        AlgorithmParams {
            clients,
            dim,
            m,
            mu: 0.3,
            l_max: 3,
            alpha_base: 0.2,
            full_downlink: false,
            subset: None,
            tie_rule: TieRule::KeepAll,
        }
    }

    /// Drives algorithms over one shared environment and returns the global
    /// model trajectories and traffic totals.
    fn drive(
        algs: &mut [Box<dyn FederatedAlgorithm>],
        p_avail: f64,
        delay: DelayModel,
        clients: usize,
        dim: usize,
        iters: usize,
    ) -> (Vec<Vec<Vec<f64>>>, Vec<Traffic>) {
        let cfg = StreamConfig { clients, group_sizes: vec![iters / 2, iters], horizon: iters, noise_variance: 0.01 };
        let plan = build_stream_plan(&cfg, 5).unwrap();
        let fm = FeatureMap::new(1, 4, dim, 1.0).unwrap();
        let mut src = MappedStream::new(&plan, &fm);
        let mut env = Environment::new(AvailabilityModel::constant(p_avail, clients).unwrap(), delay, 6);
        let mut samples = vec![None; clients];
        let mut events = vec![ClientEvent { has_data: false, available: false, delay: Delay::Discarded }; clients];
        let mut traj = vec![Vec::new(); algs.len()];
        let mut totals = vec![Traffic::default(); algs.len()];
        for n in 0..iters {
            src.fill_round(n, &mut samples).unwrap();
            let has: Vec<bool> = samples.iter().map(Option::is_some).collect();
            env.draw_round(n, &has, &mut events);
            let round = Round { iteration: n, samples: &samples, events: &events };
            for (i, a) in algs.iter_mut().enumerate() {
                let t = a.step(&round).unwrap();
                totals[i].uplink += t.uplink;
                totals[i].downlink += t.downlink;
                totals[i].participants += t.participants;
                traj[i].push(a.global_model().to_vec());
            }
        }
        (traj, totals)
    }

    #[test]
    fn ids_round_trip() {
        for id in AlgorithmId::all() {
            assert_eq!(id.to_string().parse::<AlgorithmId>().unwrap(), id);
        }
        assert_eq!(AlgorithmId::all().len(), 9);
        assert!("pao-fed-x1".parse::<AlgorithmId>().is_err());
        assert!("pao-fed-c3".parse::<AlgorithmId>().is_err());
        let json = serde_json::to_string(&AlgorithmId::PsoFed).unwrap();
        assert_eq!(json, "\"pso-fed\"");
    }

    #[test]
    fn synchronous_pao_fed_is_fedsgd() {
        let p = params(8, 12, 12);
        let c1 = AlgorithmId::PaoFed { coordination: Coordination::Coordinated, version: 1 };
        let mut algs = vec![
            build_algorithm(c1, &p, 1).unwrap(),
            build_algorithm(AlgorithmId::OnlineFedSgd, &p, 1).unwrap(),
        ];
        let (traj, _) = drive(&mut algs, 1.0, DelayModel::none(), 8, 12, 200);
        for (a, b) in traj[0].iter().zip(&traj[1]) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
        assert!(traj[0].last().unwrap().iter().any(|v| *v != 0.0));
    }

    #[test]
    fn full_subset_online_fed_is_fedsgd() {
        let mut p = params(8, 10, 2);
        p.subset = Some(8);
        let mut algs = vec![
            build_algorithm(AlgorithmId::OnlineFed, &p, 2).unwrap(),
            build_algorithm(AlgorithmId::OnlineFedSgd, &p, 2).unwrap(),
        ];
        let (traj, _) = drive(&mut algs, 0.5, DelayModel::new(0.3, 3, 1).unwrap(), 8, 10, 150);
        assert_eq!(traj[0], traj[1]);
    }

    #[test]
    fn ideal_pso_fed_is_pao_fed_c1() {
        let mut p = params(8, 10, 2);
        p.subset = Some(8);
        let c1 = AlgorithmId::PaoFed { coordination: Coordination::Coordinated, version: 1 };
        let mut algs = vec![build_algorithm(AlgorithmId::PsoFed, &p, 3).unwrap(), build_algorithm(c1, &p, 3).unwrap()];
        let (traj, _) = drive(&mut algs, 1.0, DelayModel::none(), 8, 10, 150);
        assert_eq!(traj[0], traj[1]);
    }

    #[test]
    fn empty_subset_freezes_model() {
        let mut p = params(4, 6, 2);
        p.subset = Some(0);
        let mut algs = vec![build_algorithm(AlgorithmId::PsoFed, &p, 3).unwrap()];
        let (traj, totals) = drive(&mut algs, 1.0, DelayModel::none(), 4, 6, 50);
        assert!(traj[0].iter().all(|w| w.iter().all(|v| *v == 0.0)));
        assert_eq!(totals[0], Traffic::default());
    }

    #[test]
    fn uplink_accounting_ratio() {
        let p = params(8, 200, 4);
        let u1 = AlgorithmId::PaoFed { coordination: Coordination::Uncoordinated, version: 1 };
        let mut algs = vec![build_algorithm(u1, &p, 4).unwrap(), build_algorithm(AlgorithmId::OnlineFedSgd, &p, 4).unwrap()];
        let (_, totals) = drive(&mut algs, 0.4, DelayModel::new(0.2, 3, 1).unwrap(), 8, 200, 60);
        assert_eq!(totals[0].participants, totals[1].participants);
        assert!(totals[0].participants > 0);
        assert_eq!(totals[0].uplink * 50, totals[1].uplink);
        assert_eq!(totals[0].uplink, 4 * totals[0].participants);
        assert_eq!(totals[0].downlink, 4 * totals[0].participants);
    }

    #[test]
    fn aggregation_is_local_to_delivered_masks() {
        // One client, coordinated masks, no delay: only the uplink window moves.
        let cfg = VariantConfig::pao_fed(Coordination::Coordinated, 1, 0.2, 0).unwrap();
        let mut alg = PartialSharing::new("t", 1, 6, 2, 0.5, cfg, 0).unwrap();
        let samples = vec![Some(Sample { z: vec![1.0; 6], y: 1.0 })];
        let events = vec![ClientEvent { has_data: true, available: true, delay: Delay::Steps(0) }];
        for n in 0..5 {
            let before = alg.global_model().to_vec();
            alg.step(&Round { iteration: n, samples: &samples, events: &events }).unwrap();
            let up = alg.scheduler().uplink(UplinkRule::Shifted, 0, n);
            for j in 0..6 {
                if !up.contains(j) {
                    assert_eq!(alg.global_model()[j], before[j]);
                }
            }
        }
    }

    #[test]
    fn round_shape_checked() {
        let mut a = build_algorithm(AlgorithmId::OnlineFedSgd, &params(3, 4, 1), 0).unwrap();
        let r = Round { iteration: 0, samples: &[None], events: &[] };
        assert!(a.step(&r).is_err());
    }
}
