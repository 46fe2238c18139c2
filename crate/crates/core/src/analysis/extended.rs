//! Extended system stacking the server model, every client model and the
//! delayed client copies, with samplers and expectations of its
//! aggregation (`B`) and merge (`A`) matrices.
//!
//! Block layout (each block `D` wide): block 0 is the server, then
//! `l_max + 2` groups of `K` client blocks. Group 1 holds the current client
//! models, group `g + 1` the models sent `g - 1` iterations ago, and the last
//! group only exists to receive the shift out of group `l_max + 1`.

use rand::Rng;
use rayon::prelude::*;

use crate::algorithms::{AggregationWeights, Coordination, MaskScheduler, UplinkRule, VariantConfig};
use crate::environment::{resolve_conflicts, DelayModel, DelayPartition, InFlightMessage, TieRule};
use crate::error::{Error, Result};
use crate::rng::{run_seed, substream, Stream};

use super::dense::Mat;
use super::kron::kron_index;
use super::sparse::Csr;

/// Largest number of outcomes [`ExtendedSystem::exact_q`] will enumerate.
pub const MAX_EXACT_OUTCOMES: usize = 1 << 22;

#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub clients: usize,
    pub dim: usize,
    pub m: usize,
    pub coordination: Coordination,
    pub uplink: UplinkRule,
    pub full_downlink: bool,
    pub weights: AggregationWeights,
    pub tie_rule: TieRule,
    /// Delay law; its cutoff is `l_max`.
    pub delay: DelayModel,
    /// Participation probability of each client, constant over time.
    pub probs: Vec<f64>,
    /// Input correlation `R_k` of each client.
    pub correlations: Vec<Mat>,
    /// Observation noise variance of each client.
    pub noise: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedSystem {
    cfg: SystemConfig,
    sched: MaskScheduler,
}

/// One joint draw of everything random in `A_{e,n}` or `B_{e,n}`.
#[derive(Debug, Clone, PartialEq)]
struct Draw {
    phase: usize,
    bits: Vec<bool>,
}

/// Rows of a random matrix: fixed sparse rows plus random rows, each with a
/// fixed support of `width` columns.
struct RowModel {
    n: usize,
    fixed: Vec<Vec<(usize, f64)>>,
    random_rows: Vec<usize>,
    supports: Vec<Vec<usize>>,
    width: usize,
}

/// Weighted first and second moments of the random rows.
#[derive(Clone)]
struct Moments {
    weight: f64,
    mean: Vec<f64>,
    second: Vec<f64>,
}

impl Moments {
    fn zeros(rows: usize, width: usize) -> Self {
        Self { weight: 0.0, mean: vec![0.0; rows * width], second: vec![0.0; rows * rows * width * width] }
    }

    fn add(&mut self, w: f64, vals: &[f64], rows: usize, width: usize) {
        self.weight += w;
        for (m, v) in self.mean.iter_mut().zip(vals) {
            *m += w * v;
        }
        let ww = width * width;
        for p in 0..rows {
            let vp = &vals[p * width..(p + 1) * width];
            for q in 0..rows {
                let vq = &vals[q * width..(q + 1) * width];
                let out = &mut self.second[(p * rows + q) * ww..(p * rows + q + 1) * ww];
                for (a, &va) in vp.iter().enumerate() {
                    if va == 0.0 {
                        continue;
                    }
                    let wa = w * va;
                    for (b, &vb) in vq.iter().enumerate() {
                        out[a * width + b] += wa * vb;
                    }
                }
            }
        }
    }

    fn merge(mut self, other: Moments) -> Moments {
        self.weight += other.weight;
        self.mean.iter_mut().zip(other.mean).for_each(|(a, b)| *a += b);
        self.second.iter_mut().zip(other.second).for_each(|(a, b)| *a += b);
        self
    }

    fn normalized(mut self) -> Moments {
        let w = self.weight;
        self.mean.iter_mut().for_each(|v| *v /= w);
        self.second.iter_mut().for_each(|v| *v /= w);
        self.weight = 1.0;
        self
    }
}

impl RowModel {
    fn realize(&self, vals: &[f64]) -> Csr {
        let mut t = Vec::new();
        for (r, row) in self.fixed.iter().enumerate() {
            t.extend(row.iter().map(|&(c, v)| (r, c, v)));
        }
        for (p, &r) in self.random_rows.iter().enumerate() {
            let v = &vals[p * self.width..(p + 1) * self.width];
            t.extend(self.supports[p].iter().zip(v).map(|(&c, &v)| (r, c, v)));
        }
        Csr::from_triplets(self.n, self.n, t)
    }

    /// Index of each row among the random rows.
    fn random_index(&self) -> Vec<Option<usize>> {
        let mut idx = vec![None; self.n];
        for (p, &r) in self.random_rows.iter().enumerate() {
            idx[r] = Some(p);
        }
        idx
    }

    fn mean_rows(&self, mom: &Moments) -> Vec<Vec<(usize, f64)>> {
        let mut rows = self.fixed.clone();
        for (p, &r) in self.random_rows.iter().enumerate() {
            rows[r] = self.supports[p]
                .iter()
                .zip(&mom.mean[p * self.width..(p + 1) * self.width])
                .map(|(&c, &v)| (c, v))
                .collect();
        }
        rows
    }

    fn mean(&self, mom: &Moments) -> Csr {
        let t = self
            .mean_rows(mom)
            .into_iter()
            .enumerate()
            .flat_map(|(r, row)| row.into_iter().map(move |(c, v)| (r, c, v)))
            .collect();
        Csr::from_triplets(self.n, self.n, t)
    }

    /// `E[X (x)_b X]` from the moments: rows pairing two random rows use the
    /// second moments, every other row factorizes into a product of means.
    fn second(&self, mom: &Moments, bs: usize) -> Csr {
        let blocks = self.n / bs;
        let rows = self.mean_rows(mom);
        let ridx = self.random_index();
        let nr = self.random_rows.len();
        let w = self.width;
        let per_row: Vec<Vec<(usize, usize, f64)>> = (0..self.n)
            .into_par_iter()
            .map(|ra| {
                let mut t = Vec::new();
                for rb in 0..self.n {
                    let r = kron_index(ra, rb, bs, blocks);
                    match (ridx[ra], ridx[rb]) {
                        (Some(p), Some(q)) => {
                            let block = &mom.second[(p * nr + q) * w * w..(p * nr + q + 1) * w * w];
                            for (a, &ca) in self.supports[p].iter().enumerate() {
                                for (b, &cb) in self.supports[q].iter().enumerate() {
                                    let v = block[a * w + b];
                                    if v != 0.0 {
                                        t.push((r, kron_index(ca, cb, bs, blocks), v));
                                    }
                                }
                            }
                        }
                        _ => {
                            for &(ca, va) in &rows[ra] {
                                for &(cb, vb) in &rows[rb] {
                                    if va * vb != 0.0 {
                                        t.push((r, kron_index(ca, cb, bs, blocks), va * vb));
                                    }
                                }
                            }
                        }
                    }
                }
                t
            })
            .collect();
        Csr::from_triplets(self.n * self.n, self.n * self.n, per_row.into_iter().flatten().collect())
    }
}

/// Expectations of the extended matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Expectations {
    pub mean_a: Csr,
    pub mean_b: Csr,
    /// `E[A (x)_b A]`.
    pub q_a: Csr,
    /// `E[B (x)_b B]`.
    pub q_b: Csr,
}

/// How expectations over the environment are taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expectation {
    /// Enumerates every weighted outcome.
    Exact,
    MonteCarlo { samples: usize, seed: u64 },
}

impl ExtendedSystem {
    pub fn new(cfg: SystemConfig) -> Result<Self> {
        let mut errs = Vec::new();
        if cfg.clients == 0 {
            errs.push("at least one client is required".to_string());
        }
        if cfg.m == 0 || cfg.m > cfg.dim {
            errs.push(format!("m = {} must lie in 1..={}", cfg.m, cfg.dim));
        }
        for (name, len) in [("probs", cfg.probs.len()), ("correlations", cfg.correlations.len()), ("noise", cfg.noise.len())] {
            if len != cfg.clients {
                errs.push(format!("{name} has {len} entries for {} clients", cfg.clients));
            }
        }
        if let Some(p) = cfg.probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            errs.push(format!("participation probability {p} outside [0, 1]"));
        }
        if let Some(s) = cfg.noise.iter().find(|s| !(**s >= 0.0)) {
            errs.push(format!("noise variance {s} is negative"));
        }
        for (k, r) in cfg.correlations.iter().enumerate() {
            if r.rows() != cfg.dim || r.cols() != cfg.dim {
                errs.push(format!("R_{k} is {}x{}, expected {d}x{d}", r.rows(), r.cols(), d = cfg.dim));
            } else if r.max_abs_diff(&r.transpose()) > 1e-12 {
                errs.push(format!("R_{k} is not symmetric"));
            }
        }
        if !errs.is_empty() {
            return Err(Error::InvalidConfig(errs));
        }
        let sched = MaskScheduler::new(cfg.dim, cfg.m, cfg.coordination)?;
        Ok(Self { cfg, sched })
    }

    pub fn config(&self) -> &SystemConfig {
        &self.cfg
    }

    pub fn clients(&self) -> usize {
        self.cfg.clients
    }

    pub fn dim(&self) -> usize {
        self.cfg.dim
    }

    pub fn l_max(&self) -> usize {
        self.cfg.delay.cutoff()
    }

    /// `1 + K (l_max + 2)`.
    pub fn blocks(&self) -> usize {
        1 + self.cfg.clients * (self.l_max() + 2)
    }

    /// Length of the extended state vector.
    pub fn n_e(&self) -> usize {
        self.blocks() * self.cfg.dim
    }

    /// Fraction of coordinates on the downlink.
    pub fn p_m(&self) -> f64 {
        if self.cfg.full_downlink {
            1.0
        } else {
            self.cfg.m as f64 / self.cfg.dim as f64
        }
    }

    /// Block of client `k` in group `g` (`1..=l_max + 2`).
    pub fn block(&self, group: usize, client: usize) -> usize {
        1 + (group - 1) * self.cfg.clients + client
    }

    /// Partial-sharing settings that simulate this system.
    pub fn variant_config(&self) -> VariantConfig {
        VariantConfig {
            coordination: self.cfg.coordination,
            uplink: self.cfg.uplink,
            weights: self.cfg.weights.clone(),
            autonomous: true,
            full_downlink: self.cfg.full_downlink,
            tie_rule: self.cfg.tie_rule,
            subset: None,
            staleness_aware: true,
        }
    }

    fn row(&self, block: usize, i: usize) -> usize {
        block * self.cfg.dim + i
    }

    /// Delays that can occur with positive probability.
    fn delays(&self) -> Vec<usize> {
        (0..=self.l_max()).filter(|&l| self.cfg.delay.pmf(l) > 0.0).collect()
    }

    /// `R_e = blockdiag{0, R_1, ..., R_K, 0, ...}`.
    pub fn extended_correlation(&self) -> Csr {
        self.group_one_blocks(|k| self.cfg.correlations[k].clone())
    }

    /// `blockdiag{0, s_1 R_1, ..., s_K R_K, 0, ...}` with `s_k` the noise
    /// variances.
    pub fn noise_correlation(&self) -> Csr {
        self.group_one_blocks(|k| {
            let r = &self.cfg.correlations[k];
            let s = self.cfg.noise[k];
            Mat::from_vec(r.rows(), r.cols(), r.as_slice().iter().map(|v| v * s).collect())
        })
    }

    fn group_one_blocks(&self, f: impl Fn(usize) -> Mat) -> Csr {
        let d = self.cfg.dim;
        let mut t = Vec::new();
        for k in 0..self.cfg.clients {
            let m = f(k);
            let base = self.block(1, k) * d;
            for i in 0..d {
                for j in 0..d {
                    t.push((base + i, base + j, m[(i, j)]));
                }
            }
        }
        Csr::from_triplets(self.n_e(), self.n_e(), t)
    }

    // ---- A_{e,n} ----

    fn a_model(&self) -> RowModel {
        let (d, n) = (self.cfg.dim, self.n_e());
        let mut fixed: Vec<Vec<(usize, f64)>> = (0..n).map(|r| vec![(r, 1.0)]).collect();
        let mut random_rows = Vec::new();
        let mut supports = Vec::new();
        for k in 0..self.cfg.clients {
            for i in 0..d {
                let r = self.row(self.block(1, k), i);
                fixed[r].clear();
                random_rows.push(r);
                supports.push(vec![i, r]);
            }
        }
        RowModel { n, fixed, random_rows, supports, width: 2 }
    }

    fn a_values(&self, draw: &Draw) -> Vec<f64> {
        let d = self.cfg.dim;
        let mut vals = Vec::with_capacity(self.cfg.clients * d * 2);
        for k in 0..self.cfg.clients {
            let mask = self.sched.downlink(k, draw.phase);
            for i in 0..d {
                let merged = draw.bits[k] && (self.cfg.full_downlink || mask.contains(i));
                vals.extend(if merged { [1.0, 0.0] } else { [0.0, 1.0] });
            }
        }
        vals
    }

    fn a_probs(&self) -> Vec<f64> {
        self.cfg.probs.clone()
    }

    pub fn sample_a(&self, rng: &mut impl Rng) -> Csr {
        let draw = self.draw(&self.a_probs(), rng);
        self.a_model().realize(&self.a_values(&draw))
    }

    /// Closed-form `E[A_{e,n}]`: client rows carry `p_k p_m I` in the server
    /// column and `(1 - p_k p_m) I` on the diagonal.
    pub fn expected_a(&self) -> Csr {
        let (d, n) = (self.cfg.dim, self.n_e());
        let pm = self.p_m();
        let mut t = Vec::new();
        for r in 0..d {
            t.push((r, r, 1.0));
        }
        for g in 1..=self.l_max() + 2 {
            for k in 0..self.cfg.clients {
                for i in 0..d {
                    let r = self.row(self.block(g, k), i);
                    if g == 1 {
                        let a = self.cfg.probs[k] * pm;
                        t.push((r, i, a));
                        t.push((r, r, 1.0 - a));
                    } else {
                        t.push((r, r, 1.0));
                    }
                }
            }
        }
        Csr::from_triplets(n, n, t)
    }

    // ---- B_{e,n} ----

    fn b_model(&self) -> RowModel {
        let (d, n) = (self.cfg.dim, self.n_e());
        let mut fixed: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut supports = Vec::new();
        for i in 0..d {
            let mut s = vec![i];
            for l in 0..=self.l_max() {
                for k in 0..self.cfg.clients {
                    s.push(self.row(self.block(l + 1, k), i));
                }
            }
            supports.push(s);
        }
        for k in 0..self.cfg.clients {
            for i in 0..d {
                let r = self.row(self.block(1, k), i);
                fixed[r].push((r, 1.0));
                for g in 1..=self.l_max() + 1 {
                    fixed[self.row(self.block(g + 1, k), i)].push((self.row(self.block(g, k), i), 1.0));
                }
            }
        }
        let width = 1 + self.cfg.clients * (self.l_max() + 1);
        RowModel { n, fixed, random_rows: (0..d).collect(), supports, width }
    }

    /// Probability of each arrival bit, ordered `(k, l)` over the delays of
    /// [`Self::delays`].
    fn b_probs(&self) -> Vec<f64> {
        let delays = self.delays();
        let mut p = Vec::with_capacity(self.cfg.clients * delays.len());
        for k in 0..self.cfg.clients {
            for &l in &delays {
                p.push(self.cfg.probs[k] * self.cfg.delay.pmf(l));
            }
        }
        p
    }

    fn b_values(&self, draw: &Draw) -> Vec<f64> {
        let (d, kk) = (self.cfg.dim, self.cfg.clients);
        let delays = self.delays();
        let period = self.sched.period();
        let now = period * (self.l_max() + 1) + draw.phase;
        let mut msgs = Vec::new();
        for k in 0..kk {
            for (li, &l) in delays.iter().enumerate() {
                if draw.bits[k * delays.len() + li] {
                    let mask = self.sched.uplink(self.cfg.uplink, k, now - l).indices();
                    msgs.push(InFlightMessage {
                        client_id: k,
                        send_iteration: now - l,
                        delivery_iteration: now,
                        payload: vec![0.0; mask.len()],
                        mask,
                    });
                }
            }
        }
        let resolved = resolve_conflicts(&DelayPartition::from_messages(msgs), self.cfg.tie_rule);
        let width = 1 + kk * (self.l_max() + 1);
        let mut vals = vec![0.0; d * width];
        for l in 0..resolved.depth() {
            let group = resolved.group(l);
            if group.is_empty() {
                continue;
            }
            let c = self.cfg.weights.alpha(l) / group.len() as f64;
            for msg in group {
                for &i in &msg.mask {
                    vals[i * width + 1 + l * kk + msg.client_id] += c;
                }
            }
        }
        for i in 0..d {
            let row = &mut vals[i * width..(i + 1) * width];
            row[0] = 1.0 - row[1..].iter().sum::<f64>();
        }
        vals
    }

    pub fn sample_b(&self, rng: &mut impl Rng) -> Csr {
        let draw = self.draw(&self.b_probs(), rng);
        self.b_model().realize(&self.b_values(&draw))
    }

    // ---- expectations ----

    fn draw(&self, probs: &[f64], rng: &mut impl Rng) -> Draw {
        let phase = rng.random_range(0..self.sched.period());
        let bits = probs.iter().map(|&p| rng.random::<f64>() < p).collect();
        Draw { phase, bits }
    }

    fn outcome_count(&self, probs: &[f64]) -> usize {
        let free = probs.iter().filter(|&&p| p > 0.0 && p < 1.0).count();
        1usize.checked_shl(free as u32).unwrap_or(usize::MAX).saturating_mul(self.sched.period())
    }

    /// Outcomes that [`Expectation::Exact`] enumerates for the larger of
    /// the two matrices.
    pub fn exact_outcomes(&self) -> usize {
        self.outcome_count(&self.a_probs()).max(self.outcome_count(&self.b_probs()))
    }

    /// Every outcome with positive probability, with its weight.
    fn outcomes(&self, probs: &[f64]) -> Result<Vec<(f64, Draw)>> {
        let period = self.sched.period();
        let count = self.outcome_count(probs);
        if count > MAX_EXACT_OUTCOMES {
            return Err(Error::invalid(format!("{count} outcomes exceed the exact enumeration limit")));
        }
        let mut partial: Vec<(f64, Vec<bool>)> = vec![(1.0, Vec::with_capacity(probs.len()))];
        for &p in probs {
            let mut next = Vec::with_capacity(partial.len() * 2);
            for (w, bits) in partial {
                if p < 1.0 {
                    let mut b = bits.clone();
                    b.push(false);
                    next.push((w * (1.0 - p), b));
                }
                if p > 0.0 {
                    let mut b = bits;
                    b.push(true);
                    next.push((w * p, b));
                }
            }
            partial = next;
        }
        let pw = 1.0 / period as f64;
        Ok((0..period)
            .flat_map(|phase| partial.iter().map(move |(w, bits)| (w * pw, Draw { phase, bits: bits.clone() })))
            .collect())
    }

    fn moments_exact(&self, model: &RowModel, probs: &[f64], values: impl Fn(&Draw) -> Vec<f64> + Sync) -> Result<Moments> {
        let nr = model.random_rows.len();
        let out = self
            .outcomes(probs)?
            .par_chunks(256)
            .map(|chunk| {
                let mut m = Moments::zeros(nr, model.width);
                for (w, draw) in chunk {
                    m.add(*w, &values(draw), nr, model.width);
                }
                m
            })
            .collect::<Vec<_>>()
            .into_iter()
            .fold(Moments::zeros(nr, model.width), Moments::merge);
        Ok(out.normalized())
    }

    fn moments_mc(
        &self,
        model: &RowModel,
        probs: &[f64],
        samples: usize,
        seed: u64,
        stream: Stream,
        values: impl Fn(&Draw) -> Vec<f64> + Sync,
    ) -> Moments {
        const CHUNK: usize = 1024;
        let nr = model.random_rows.len();
        (0..samples.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut rng = substream(run_seed(seed, c), stream);
                let mut m = Moments::zeros(nr, model.width);
                for _ in 0..CHUNK.min(samples - c * CHUNK) {
                    let draw = self.draw(probs, &mut rng);
                    m.add(1.0, &values(&draw), nr, model.width);
                }
                m
            })
            .collect::<Vec<_>>()
            .into_iter()
            .fold(Moments::zeros(nr, model.width), Moments::merge)
            .normalized()
    }

    /// First and second moments of `A_{e,n}` and `B_{e,n}`.
    pub fn expectations(&self, how: Expectation) -> Result<Expectations> {
        let (am, bm) = (self.a_model(), self.b_model());
        let a_vals = |d: &Draw| self.a_values(d);
        let b_vals = |d: &Draw| self.b_values(d);
        let (ma, mb) = match how {
            Expectation::Exact => (
                self.moments_exact(&am, &self.a_probs(), a_vals)?,
                self.moments_exact(&bm, &self.b_probs(), b_vals)?,
            ),
            Expectation::MonteCarlo { samples, seed } => {
                if samples == 0 {
                    return Err(Error::invalid("Monte-Carlo estimation needs at least one sample"));
                }
                (
                    self.moments_mc(&am, &self.a_probs(), samples, seed, Stream::Analysis, a_vals),
                    self.moments_mc(&bm, &self.b_probs(), samples, seed, Stream::Custom(1), b_vals),
                )
            }
        };
        let d = self.cfg.dim;
        Ok(Expectations {
            mean_a: am.mean(&ma),
            mean_b: bm.mean(&mb),
            q_a: am.second(&ma, d),
            q_b: bm.second(&mb, d),
        })
    }

    /// Monte-Carlo `(Q_A, Q_B)`.
    pub fn estimate_q(&self, samples: usize, seed: u64) -> Result<(Csr, Csr)> {
        let e = self.expectations(Expectation::MonteCarlo { samples, seed })?;
        Ok((e.q_a, e.q_b))
    }

    /// `(Q_A, Q_B)` by enumerating every outcome.
    pub fn exact_q(&self) -> Result<(Csr, Csr)> {
        let e = self.expectations(Expectation::Exact)?;
        Ok((e.q_a, e.q_b))
    }
}
