//! Streaming regression data: the synthetic nonlinear task, CSV ingestion,
//! per-client arrival schedules and held-out test sets.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rff::FeatureMap;
use crate::rng::{substream, Stream};

/// Per-client sample counts of the four default data groups.
pub const DEFAULT_GROUP_SIZES: [usize; 4] = [500, 1000, 1500, 2000];

/// Input dimension of the synthetic task.
pub const SYNTH_INPUT_DIM: usize = 4;

/// Nonlinear map from `R^4` to `R` used for the synthetic stream, plus `noise`.
pub fn synth_target(x: &[f64], noise: f64) -> Result<f64> {
    if x.len() != SYNTH_INPUT_DIM {
        return Err(Error::invalid(format!(
            "synthetic target needs a 4-vector, got length {}",
            x.len()
        )));
    }
    let s = (PI * x[3]).sin();
    Ok((x[0] * x[0] + s * s).sqrt() + (0.8 - 0.5 * (-x[1] * x[1]).exp() * x[2]) + noise)
}

/// One labelled input arriving at a client.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleEvent {
    pub client_id: usize,
    pub iteration: usize,
    pub input: Vec<f64>,
    pub target: f64,
}

/// A sample already mapped into feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub z: Vec<f64>,
    pub y: f64,
}

/// Produces, iteration by iteration, the sample each client receives.
pub trait SampleSource {
    fn clients(&self) -> usize;
    fn horizon(&self) -> usize;
    fn dim(&self) -> usize;
    /// Fills `out[k]` with client `k`'s sample at iteration `n`, or `None`.
    /// Iterations are visited in increasing order.
    fn fill_round(&mut self, n: usize, out: &mut [Option<Sample>]) -> Result<()>;
}

/// Parameters of the synthetic arrival schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamConfig {
    pub clients: usize,
    /// Samples received by each client of a data group, one entry per group.
    pub group_sizes: Vec<usize>,
    pub horizon: usize,
    pub noise_variance: f64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            clients: 256,
            group_sizes: DEFAULT_GROUP_SIZES.to_vec(),
            horizon: 2000,
            noise_variance: 1e-2,
        }
    }
}

/// Arrival schedule of every client over the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamPlan {
    horizon: usize,
    group_sizes: Vec<usize>,
    client_group: Vec<usize>,
    events: Vec<Vec<SampleEvent>>,
}

impl StreamPlan {
    pub fn clients(&self) -> usize {
        self.events.len()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Nominal per-client sample count of each data group.
    pub fn group_sizes(&self) -> &[usize] {
        &self.group_sizes
    }

    pub fn group_of(&self, client: usize) -> usize {
        self.client_group[client]
    }

    pub fn events(&self, client: usize) -> &[SampleEvent] {
        &self.events[client]
    }

    pub fn total_samples(&self) -> usize {
        self.events.iter().map(Vec::len).sum()
    }

    /// Total number of samples delivered to each data group.
    pub fn group_totals(&self) -> Vec<usize> {
        let mut totals = vec![0; self.group_sizes.len()];
        for (k, ev) in self.events.iter().enumerate() {
            totals[self.client_group[k]] += ev.len();
        }
        totals
    }

    /// Writes the plan as `client,iteration,target,x...` lines.
    pub fn dump(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "# horizon={} groups={:?}", self.horizon, self.group_sizes)?;
        for ev in self.events.iter().flatten() {
            let mut line = format!("{},{},{}", ev.client_id, ev.iteration, ev.target);
            for x in &ev.input {
                let _ = write!(line, ",{x}");
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// Data group of client `k` when `clients` are split evenly into `groups`.
pub fn client_group(k: usize, clients: usize, groups: usize) -> usize {
    k / (clients / groups)
}

/// Evenly spaced arrival iterations for `count` samples over `horizon`
/// iterations, staggered by `slot / slots` of one spacing.
pub fn arrival_iterations(count: usize, horizon: usize, slot: usize, slots: usize) -> Vec<usize> {
    debug_assert!(count <= horizon && slot < slots.max(1));
    let slots = slots.max(1);
    (0..count)
        .map(|i| (i * slots + slot) * horizon / (count * slots))
        .collect()
}

/// Draws the synthetic stream: uniform inputs on `[-1, 1]^4`, targets from
/// [`synth_target`] with Gaussian observation noise.
pub fn build_stream_plan(cfg: &StreamConfig, seed: u64) -> Result<StreamPlan> {
    let groups = cfg.group_sizes.len();
    if cfg.clients == 0 || groups == 0 {
        return Err(Error::invalid("need at least one client and one data group"));
    }
    if cfg.clients % groups != 0 {
        return Err(Error::invalid(format!(
            "{} clients cannot be split evenly into {groups} data groups",
            cfg.clients
        )));
    }
    if let Some(s) = cfg.group_sizes.iter().find(|&&s| s > cfg.horizon) {
        return Err(Error::invalid(format!(
            "group size {s} exceeds the horizon {}",
            cfg.horizon
        )));
    }
    if !(cfg.noise_variance >= 0.0 && cfg.noise_variance.is_finite()) {
        return Err(Error::invalid("noise variance must be non-negative"));
    }
    let noise = Normal::new(0.0, cfg.noise_variance.sqrt())
        .map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = substream(seed, Stream::Data);
    let per_group = cfg.clients / groups;
    let mut events = Vec::with_capacity(cfg.clients);
    let mut client_group = Vec::with_capacity(cfg.clients);
    for k in 0..cfg.clients {
        let g = client_group_of(k, per_group);
        client_group.push(g);
        let count = cfg.group_sizes[g];
        let its = arrival_iterations(count, cfg.horizon, k % per_group, per_group);
        let mut evs = Vec::with_capacity(count);
        for iteration in its {
            let input: Vec<f64> = (0..SYNTH_INPUT_DIM)
                .map(|_| rng.random_range(-1.0..=1.0))
                .collect();
            let eta = noise.sample(&mut rng);
            let target = synth_target(&input, eta)?;
            evs.push(SampleEvent { client_id: k, iteration, input, target });
        }
        events.push(evs);
    }
    Ok(StreamPlan {
        horizon: cfg.horizon,
        group_sizes: cfg.group_sizes.clone(),
        client_group,
        events,
    })
}

fn client_group_of(k: usize, per_group: usize) -> usize {
    k / per_group
}

/// Held-out evaluation data with cached feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct TestSet {
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
    /// Row-major `T x D`.
    mapped: Vec<f64>,
    dim: usize,
}

impl TestSet {
    pub fn new(fm: &FeatureMap, inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::invalid("test set must contain at least one sample"));
        }
        if inputs.len() != targets.len() {
            return Err(Error::invalid("test inputs and targets differ in length"));
        }
        let dim = fm.dim_out();
        let mut mapped = vec![0.0; inputs.len() * dim];
        for (row, x) in mapped.chunks_mut(dim).zip(&inputs) {
            fm.map_into(x, row)?;
        }
        Ok(Self { inputs, targets, mapped, dim })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn mapped_row(&self, i: usize) -> &[f64] {
        &self.mapped[i * self.dim..(i + 1) * self.dim]
    }

    pub fn mapped_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.mapped.chunks(self.dim)
    }
}

/// `size` noiseless synthetic samples mapped through `fm`.
pub fn build_test_set(fm: &FeatureMap, size: usize, seed: u64) -> Result<TestSet> {
    if fm.dim_in() != SYNTH_INPUT_DIM {
        return Err(Error::invalid("synthetic test set needs a 4-input feature map"));
    }
    let mut rng = substream(seed, Stream::TestSet);
    let inputs: Vec<Vec<f64>> = (0..size)
        .map(|_| (0..SYNTH_INPUT_DIM).map(|_| rng.random_range(-1.0..=1.0)).collect())
        .collect();
    let targets = inputs
        .iter()
        .map(|x| synth_target(x, 0.0))
        .collect::<Result<Vec<_>>>()?;
    TestSet::new(fm, inputs, targets)
}

/// Feeds a [`StreamPlan`] through a feature map, one iteration at a time.
pub struct MappedStream<'a> {
    plan: &'a StreamPlan,
    fm: &'a FeatureMap,
    cursor: Vec<usize>,
}

impl<'a> MappedStream<'a> {
    pub fn new(plan: &'a StreamPlan, fm: &'a FeatureMap) -> Self {
        Self { plan, fm, cursor: vec![0; plan.clients()] }
    }
}

impl SampleSource for MappedStream<'_> {
    fn clients(&self) -> usize {
        self.plan.clients()
    }

    fn horizon(&self) -> usize {
        self.plan.horizon()
    }

    fn dim(&self) -> usize {
        self.fm.dim_out()
    }

    fn fill_round(&mut self, n: usize, out: &mut [Option<Sample>]) -> Result<()> {
        for (k, slot) in out.iter_mut().enumerate() {
            let events = self.plan.events(k);
            let c = &mut self.cursor[k];
            while *c < events.len() && events[*c].iteration < n {
                *c += 1;
            }
            *slot = match events.get(*c) {
                Some(ev) if ev.iteration == n => {
                    *c += 1;
                    Some(Sample { z: self.fm.map(&ev.input)?, y: ev.target })
                }
                _ => None,
            };
        }
        Ok(())
    }
}

/// Stream whose targets are exactly linear in feature space:
/// `y = z . w_star + eta`, with every client receiving one sample per
/// iteration. Used to compare simulated deviations against theory.
pub struct LinearStream {
    fm: FeatureMap,
    w_star: Vec<f64>,
    noise: Normal<f64>,
    clients: usize,
    horizon: usize,
    rng: ChaCha8Rng,
}

impl LinearStream {
    pub fn new(
        fm: FeatureMap,
        w_star: Vec<f64>,
        noise_variance: f64,
        clients: usize,
        horizon: usize,
        seed: u64,
    ) -> Result<Self> {
        if w_star.len() != fm.dim_out() {
            return Err(Error::invalid("w_star must match the feature dimension"));
        }
        let noise = Normal::new(0.0, noise_variance.max(0.0).sqrt())
            .map_err(|e| Error::invalid(e.to_string()))?;
        Ok(Self {
            fm,
            w_star,
            noise,
            clients,
            horizon,
            rng: substream(seed, Stream::Data),
        })
    }

    pub fn w_star(&self) -> &[f64] {
        &self.w_star
    }
}

impl SampleSource for LinearStream {
    fn clients(&self) -> usize {
        self.clients
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn dim(&self) -> usize {
        self.fm.dim_out()
    }

    fn fill_round(&mut self, _n: usize, out: &mut [Option<Sample>]) -> Result<()> {
        for slot in out.iter_mut() {
            let x: Vec<f64> = (0..self.fm.dim_in())
                .map(|_| self.rng.random_range(-1.0..=1.0))
                .collect();
            let z = self.fm.map(&x)?;
            let y = dot(&z, &self.w_star) + self.noise.sample(&mut self.rng);
            *slot = Some(Sample { z, y });
        }
        Ok(())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Feature scaling applied to CSV columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Affine map of each column onto `[-1, 1]`.
    #[default]
    MinMax,
    /// Zero mean, unit variance per column.
    ZScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvOptions {
    pub feature_columns: Vec<String>,
    pub target_column: String,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

fn default_test_fraction() -> f64 {
    0.1
}

/// A CSV regression dataset after cleaning, normalization, shuffling and
/// the train/test split.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvDataset {
    stream_inputs: Vec<Vec<f64>>,
    stream_targets: Vec<f64>,
    test_inputs: Vec<Vec<f64>>,
    test_targets: Vec<f64>,
}

impl CsvDataset {
    /// Reads `path`, drops rows with missing or non-numeric values in the
    /// selected columns, normalizes features and shuffles with `seed`.
    pub fn load(path: &Path, opts: &CsvOptions, seed: u64) -> Result<Self> {
        if !path.exists() {
            return Err(Error::FileNotFound(path.to_path_buf()));
        }
        if opts.feature_columns.is_empty() {
            return Err(Error::invalid("at least one feature column is required"));
        }
        if !(0.0..1.0).contains(&opts.test_fraction) {
            return Err(Error::invalid("test fraction must lie in [0, 1)"));
        }
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        let headers = reader.headers()?.clone();
        let find = |name: &str| {
            headers.iter().position(|h| h.trim() == name).ok_or_else(|| Error::MissingColumn {
                path: path.to_path_buf(),
                column: name.to_string(),
            })
        };
        let feature_idx = opts
            .feature_columns
            .iter()
            .map(|c| find(c))
            .collect::<Result<Vec<_>>>()?;
        let target_idx = find(&opts.target_column)?;

        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for record in reader.records() {
            let record = record?;
            let parse = |i: usize| {
                record
                    .get(i)
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .and_then(|s| s.parse::<f64>().ok())
                    .filter(|v| v.is_finite())
            };
            let x: Option<Vec<f64>> = feature_idx.iter().map(|&i| parse(i)).collect();
            if let (Some(x), Some(y)) = (x, parse(target_idx)) {
                inputs.push(x);
                targets.push(y);
            }
        }
        if inputs.is_empty() {
            return Err(Error::NoUsableRows(path.to_path_buf()));
        }
        normalize_columns(&mut inputs, opts.normalization);

        let mut order: Vec<usize> = (0..inputs.len()).collect();
        order.shuffle(&mut substream(seed, Stream::Shuffle));
        let n_test = (inputs.len() as f64 * opts.test_fraction).round() as usize;
        let (test_idx, stream_idx) = order.split_at(n_test);
        let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<f64>) {
            (idx.iter().map(|&i| inputs[i].clone()).collect(), idx.iter().map(|&i| targets[i]).collect())
        };
        let (test_inputs, test_targets) = pick(test_idx);
        let (stream_inputs, stream_targets) = pick(stream_idx);
        Ok(Self { stream_inputs, stream_targets, test_inputs, test_targets })
    }

    pub fn input_dim(&self) -> usize {
        self.stream_inputs
            .first()
            .or(self.test_inputs.first())
            .map_or(0, Vec::len)
    }

    pub fn stream_len(&self) -> usize {
        self.stream_targets.len()
    }

    pub fn test_len(&self) -> usize {
        self.test_targets.len()
    }

    pub fn stream_inputs(&self) -> &[Vec<f64>] {
        &self.stream_inputs
    }

    pub fn stream_targets(&self) -> &[f64] {
        &self.stream_targets
    }

    /// Distributes the streamed rows over `clients` clients, data group `g`
    /// receiving a share of the rows proportional to `group_weights[g]`.
    /// The horizon is the largest per-client count.
    pub fn stream_plan(&self, clients: usize, group_weights: &[usize]) -> Result<StreamPlan> {
        let groups = group_weights.len();
        if clients == 0 || groups == 0 || clients % groups != 0 {
            return Err(Error::invalid(format!(
                "{clients} clients cannot be split evenly into {groups} data groups"
            )));
        }
        let per_group = clients / groups;
        let totals = apportion(self.stream_len(), group_weights);
        let mut counts = Vec::with_capacity(clients);
        for &total in &totals {
            for j in 0..per_group {
                counts.push(total / per_group + usize::from(j < total % per_group));
            }
        }
        let horizon = counts.iter().copied().max().unwrap_or(0);
        if horizon == 0 {
            return Err(Error::invalid("not enough rows to give any client a sample"));
        }
        let mut next = 0;
        let mut events = Vec::with_capacity(clients);
        let mut client_group = Vec::with_capacity(clients);
        for (k, &count) in counts.iter().enumerate() {
            client_group.push(client_group_of(k, per_group));
            let its = arrival_iterations(count, horizon, k % per_group, per_group);
            let evs = its
                .into_iter()
                .map(|iteration| {
                    let ev = SampleEvent {
                        client_id: k,
                        iteration,
                        input: self.stream_inputs[next].clone(),
                        target: self.stream_targets[next],
                    };
                    next += 1;
                    ev
                })
                .collect();
            events.push(evs);
        }
        let nominal = totals.iter().map(|t| t.div_ceil(per_group)).collect();
        Ok(StreamPlan { horizon, group_sizes: nominal, client_group, events })
    }

    pub fn test_set(&self, fm: &FeatureMap) -> Result<TestSet> {
        TestSet::new(fm, self.test_inputs.clone(), self.test_targets.clone())
    }
}

/// Splits `total` into parts proportional to `weights` (largest remainder).
fn apportion(total: usize, weights: &[usize]) -> Vec<usize> {
    let wsum: usize = weights.iter().sum();
    if wsum == 0 {
        return vec![0; weights.len()];
    }
    let mut parts: Vec<usize> = weights.iter().map(|w| total * w / wsum).collect();
    let mut rem: Vec<(usize, usize)> =
        weights.iter().enumerate().map(|(i, w)| (total * w % wsum, i)).collect();
    rem.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let missing = total - parts.iter().sum::<usize>();
    for &(_, i) in rem.iter().take(missing) {
        parts[i] += 1;
    }
    parts
}

fn normalize_columns(rows: &mut [Vec<f64>], mode: Normalization) {
    let cols = rows[0].len();
    let n = rows.len() as f64;
    for c in 0..cols {
        match mode {
            Normalization::MinMax => {
                let (lo, hi) = rows
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r[c]), hi.max(r[c])));
                let span = hi - lo;
                for r in rows.iter_mut() {
                    r[c] = if span > 0.0 { 2.0 * (r[c] - lo) / span - 1.0 } else { 0.0 };
                }
            }
            Normalization::ZScore => {
                let mean = rows.iter().map(|r| r[c]).sum::<f64>() / n;
                let var = rows.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / n;
                let sd = var.sqrt();
                for r in rows.iter_mut() {
                    r[c] = if sd > 0.0 { (r[c] - mean) / sd } else { 0.0 };
                }
            }
        }
    }
}

/// Loads a CSV regression stream and its held-out test set in one call.
pub fn load_csv_stream(
    path: &Path,
    opts: &CsvOptions,
    clients: usize,
    group_weights: &[usize],
    fm: &FeatureMap,
    seed: u64,
) -> Result<(StreamPlan, TestSet)> {
    let data = CsvDataset::load(path, opts, seed)?;
    let plan = data.stream_plan(clients, group_weights)?;
    let test = data.test_set(fm)?;
    Ok((plan, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synth_target_hand_values() {
        assert!((synth_target(&[0.0; 4], 0.0).unwrap() - 0.8).abs() < 1e-15);
        assert!((synth_target(&[1.0, 0.0, 0.0, 0.0], 0.0).unwrap() - 1.8).abs() < 1e-15);
        assert!((synth_target(&[0.0, 0.0, 1.0, 0.5], 0.0).unwrap() - 1.3).abs() < 1e-15);
        assert!((synth_target(&[0.0; 4], 0.25).unwrap() - 1.05).abs() < 1e-15);
        assert!(synth_target(&[0.0; 3], 0.0).is_err());
    }

    #[test]
    fn default_plan_groups() {
        let plan = build_stream_plan(&StreamConfig::default(), 1).unwrap();
        assert_eq!(plan.clients(), 256);
        for g in 0..4 {
            assert_eq!((0..256).filter(|&k| plan.group_of(k) == g).count(), 64);
        }
        assert_eq!(plan.group_totals(), vec![500 * 64, 1000 * 64, 1500 * 64, 2000 * 64]);
        for k in 192..256 {
            let its: Vec<usize> = plan.events(k).iter().map(|e| e.iteration).collect();
            assert_eq!(its, (0..2000).collect::<Vec<_>>());
        }
        for k in 0..256 {
            let ev = plan.events(k);
            assert!(ev.windows(2).all(|w| w[0].iteration < w[1].iteration));
            assert!(ev.iter().all(|e| e.iteration < 2000 && e.client_id == k));
        }
    }

    #[test]
    fn single_full_group() {
        let cfg = StreamConfig { clients: 4, group_sizes: vec![30], horizon: 30, noise_variance: 0.0 };
        let plan = build_stream_plan(&cfg, 3).unwrap();
        assert!((0..4).all(|k| plan.events(k).len() == 30));
    }

    #[test]
    fn plan_is_deterministic() {
        let cfg = StreamConfig { clients: 8, group_sizes: vec![5, 10], horizon: 20, noise_variance: 0.1 };
        assert_eq!(build_stream_plan(&cfg, 9).unwrap(), build_stream_plan(&cfg, 9).unwrap());
        assert_ne!(build_stream_plan(&cfg, 9).unwrap(), build_stream_plan(&cfg, 10).unwrap());
        let mut a = Vec::new();
        let mut b = Vec::new();
        build_stream_plan(&cfg, 9).unwrap().dump(&mut a).unwrap();
        build_stream_plan(&cfg, 9).unwrap().dump(&mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn plan_rejects_uneven_split() {
        let cfg = StreamConfig { clients: 6, group_sizes: vec![1, 2, 3, 4], horizon: 10, noise_variance: 0.0 };
        assert!(matches!(build_stream_plan(&cfg, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn arrivals_are_spread_and_staggered() {
        assert_eq!(arrival_iterations(4, 8, 0, 1), vec![0, 2, 4, 6]);
        assert_eq!(arrival_iterations(4, 8, 1, 2), vec![1, 3, 5, 7]);
        let its = arrival_iterations(1500, 2000, 63, 64);
        assert_eq!(its.len(), 1500);
        assert!(its.windows(2).all(|w| w[0] < w[1]));
        assert!(*its.last().unwrap() < 2000);
    }

    #[test]
    fn noise_is_uncorrelated_with_inputs() {
        let cfg = StreamConfig { clients: 64, group_sizes: vec![2000], horizon: 2000, noise_variance: 0.01 };
        let plan = build_stream_plan(&cfg, 4).unwrap();
        let mut eta = Vec::new();
        let mut xs = vec![Vec::new(); 4];
        for ev in (0..64).flat_map(|k| plan.events(k)) {
            eta.push(ev.target - synth_target(&ev.input, 0.0).unwrap());
            for (i, x) in ev.input.iter().enumerate() {
                xs[i].push(*x);
            }
        }
        assert!(eta.len() >= 100_000);
        for col in &xs {
            assert!(correlation(&eta, col).abs() < 0.02);
        }
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn test_set_shapes_and_bounds() {
        let fm = FeatureMap::new(1, 4, 200, 1.0).unwrap();
        let ts = build_test_set(&fm, 2000, 5).unwrap();
        assert_eq!(ts.len(), 2000);
        assert_eq!(ts.inputs().len(), 2000);
        assert!(ts.inputs().iter().all(|x| x.len() == 4));
        assert_eq!(ts.mapped_rows().count(), 2000);
        assert!(ts.mapped_rows().all(|z| z.len() == 200 && dot(z, z) <= 2.0 + 1e-12));
        assert_eq!(ts.mapped_row(7), fm.map(&ts.inputs()[7]).unwrap().as_slice());
    }

    #[test]
    fn single_point_test_set() {
        let fm = FeatureMap::new(1, 4, 8, 1.0).unwrap();
        let ts = TestSet::new(&fm, vec![vec![0.0; 4]], vec![synth_target(&[0.0; 4], 0.0).unwrap()]).unwrap();
        assert!((ts.targets()[0] - 0.8).abs() < 1e-15);
        assert!(TestSet::new(&fm, vec![], vec![]).is_err());
    }

    #[test]
    fn mapped_stream_follows_plan() {
        let cfg = StreamConfig { clients: 2, group_sizes: vec![2, 4], horizon: 4, noise_variance: 0.0 };
        let plan = build_stream_plan(&cfg, 1).unwrap();
        let fm = FeatureMap::new(2, 4, 6, 1.0).unwrap();
        let mut src = MappedStream::new(&plan, &fm);
        let mut out = vec![None, None];
        let mut seen = [0, 0];
        for n in 0..4 {
            src.fill_round(n, &mut out).unwrap();
            for k in 0..2 {
                if let Some(s) = &out[k] {
                    let ev = &plan.events(k)[seen[k]];
                    assert_eq!(ev.iteration, n);
                    assert_eq!(s.z, fm.map(&ev.input).unwrap());
                    seen[k] += 1;
                }
            }
        }
        assert_eq!(seen, [2, 4]);
    }

    fn write_csv(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    fn opts(features: &[&str], target: &str) -> CsvOptions {
        CsvOptions {
            feature_columns: features.iter().map(|s| s.to_string()).collect(),
            target_column: target.into(),
            normalization: Normalization::MinMax,
            test_fraction: 0.0,
        }
    }

    #[test]
    fn csv_min_max_endpoints() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_csv(&dir, "a.csv", "t,y\n3.0,1\n7.5,2\n");
        let data = CsvDataset::load(&p, &opts(&["t"], "y"), 0).unwrap();
        let mut xs: Vec<f64> = data.stream_inputs().iter().map(|r| r[0]).collect();
        xs.sort_by(f64::total_cmp);
        assert_eq!(xs, vec![-1.0, 1.0]);
    }

    #[test]
    fn csv_drops_incomplete_rows_and_reports_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_csv(&dir, "b.csv", "a,b,y\n1,2,3\n,2,3\n1,x,3\n4,5,6\n");
        let data = CsvDataset::load(&p, &opts(&["a", "b"], "y"), 0).unwrap();
        assert_eq!(data.stream_len(), 2);

        let missing = dir.path().join("nope.csv");
        assert!(matches!(CsvDataset::load(&missing, &opts(&["a"], "y"), 0), Err(Error::FileNotFound(_))));
        assert!(matches!(
            CsvDataset::load(&p, &opts(&["zzz"], "y"), 0),
            Err(Error::MissingColumn { .. })
        ));
        let empty = write_csv(&dir, "c.csv", "a,y\n,1\nq,2\n");
        assert!(matches!(CsvDataset::load(&empty, &opts(&["a"], "y"), 0), Err(Error::NoUsableRows(_))));
    }

    #[test]
    fn csv_split_and_distribution() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from("a,b,y\n");
        for i in 0..80_000 {
            let _ = writeln!(body, "{},{},{}", i % 97, (i * 7) % 13, i % 11);
        }
        let p = write_csv(&dir, "big.csv", &body);
        let mut o = opts(&["a", "b"], "y");
        o.test_fraction = 0.1;
        o.normalization = Normalization::ZScore;
        let data = CsvDataset::load(&p, &o, 3).unwrap();
        assert_eq!(data.stream_len(), 72_000);
        assert_eq!(data.test_len(), 8_000);
        let plan = data.stream_plan(256, &DEFAULT_GROUP_SIZES).unwrap();
        assert_eq!(plan.total_samples(), 72_000);
        assert_eq!(plan.group_totals(), vec![7_200, 14_400, 21_600, 28_800]);
        assert_eq!(plan.horizon(), 450);
        let fm = FeatureMap::new(1, 2, 16, 1.0).unwrap();
        assert_eq!(data.test_set(&fm).unwrap().len(), 8_000);
    }

    #[test]
    fn apportion_is_exact() {
        assert_eq!(apportion(10, &[1, 2, 3, 4]), vec![1, 2, 3, 4]);
        assert_eq!(apportion(11, &[1, 1, 1]).iter().sum::<usize>(), 11);
    }
}
