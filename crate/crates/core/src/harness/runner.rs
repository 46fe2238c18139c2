//! Monte-Carlo orchestration with common random numbers.
//!
//! The feature map is built once from the experiment seed and shared by
//! every run. Each run derives one seed from the experiment seed and its
//! index. The data stream, the test set and the environment draw from named
//! substreams of that seed, and every algorithm of the run steps through
//! the same rounds.

use rand::Rng;
use rayon::prelude::*;

use crate::algorithms::{build_algorithm, AlgorithmId, FederatedAlgorithm, Round};
use crate::analysis::{estimate_correlation, Mat};
use crate::environment::{ClientEvent, Delay, Environment};
use crate::error::{Error, Result};
use crate::rff::{median_heuristic, FeatureMap};
use crate::rng::{run_seed, substream, Stream};
use crate::stream::{
    build_stream_plan, build_test_set, CsvDataset, MappedStream, SampleSource, StreamConfig, StreamPlan, TestSet,
};

use super::config::ExperimentConfig;
use super::metrics::{to_db, MetricsRecord, MseEvaluator};

const PROBE_SIZE: usize = 256;

/// Data shared by all runs of an experiment.
#[derive(Debug, Clone)]
pub enum DataSource {
    Synthetic,
    Csv(CsvDataset),
}

impl DataSource {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        match &cfg.data.csv {
            None => Ok(DataSource::Synthetic),
            Some(src) => Ok(DataSource::Csv(CsvDataset::load(&src.path, &src.options(), cfg.experiment.seed)?)),
        }
    }

    fn input_dim(&self, cfg: &ExperimentConfig) -> usize {
        match self {
            DataSource::Synthetic => cfg.model.input_dim,
            DataSource::Csv(d) => d.input_dim(),
        }
    }
}

/// Feature map of the experiment: kernel width from the config or from the
/// median heuristic on a probe of inputs.
pub fn feature_map(cfg: &ExperimentConfig, data: &DataSource) -> Result<FeatureMap> {
    let rs = cfg.experiment.seed;
    let l = data.input_dim(cfg);
    let width = match cfg.model.kernel_width {
        Some(w) => w,
        None => match data {
            DataSource::Synthetic => {
                let mut rng = substream(rs, Stream::KernelProbe);
                let probe: Vec<Vec<f64>> =
                    (0..PROBE_SIZE).map(|_| (0..l).map(|_| rng.random_range(-1.0..=1.0)).collect()).collect();
                median_heuristic(&probe)?
            }
            DataSource::Csv(d) => median_heuristic(&d.stream_inputs()[..PROBE_SIZE.min(d.stream_len())])?,
        },
    };
    FeatureMap::new(rs, l, cfg.model.dim, width)
}

/// Empirical feature correlation `E[z z^T]` under the experiment's map.
pub fn feature_correlation(cfg: &ExperimentConfig, data: &DataSource) -> Result<Mat> {
    let fm = feature_map(cfg, data)?;
    match data {
        DataSource::Synthetic => estimate_correlation(&fm, cfg.analysis.correlation_samples, cfg.experiment.seed),
        DataSource::Csv(d) => {
            let rows = &d.stream_inputs()[..cfg.analysis.correlation_samples.min(d.stream_len())];
            let dim = fm.dim_out();
            let mut r = Mat::zeros(dim, dim);
            for x in rows {
                let z = fm.map(x)?;
                for i in 0..dim {
                    for j in 0..dim {
                        r[(i, j)] += z[i] * z[j] / rows.len() as f64;
                    }
                }
            }
            Ok(r)
        }
    }
}

fn run_inputs(cfg: &ExperimentConfig, data: &DataSource, fm: &FeatureMap, rs: u64) -> Result<(StreamPlan, TestSet)> {
    match data {
        DataSource::Synthetic => {
            let sc = StreamConfig {
                clients: cfg.clients.count,
                group_sizes: cfg.clients.group_sizes.clone(),
                horizon: cfg.experiment.horizon,
                noise_variance: cfg.clients.noise_variance,
            };
            Ok((build_stream_plan(&sc, rs)?, build_test_set(fm, cfg.experiment.test_size, rs)?))
        }
        DataSource::Csv(d) => Ok((d.stream_plan(cfg.clients.count, &cfg.clients.group_sizes)?, d.test_set(fm)?)),
    }
}

/// Per-iteration traces of one algorithm in one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub mse: Vec<f64>,
    /// Cumulative parameters uploaded.
    pub uplink: Vec<u64>,
    /// Cumulative parameters downloaded.
    pub downlink: Vec<u64>,
    pub participations: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub traces: Vec<RunTrace>,
    /// Client-iterations where a client held data and was available.
    pub available_events: u64,
}

/// Runs every algorithm in `ids` through Monte-Carlo run `run`.
pub fn run_single(
    cfg: &ExperimentConfig,
    data: &DataSource,
    fm: &FeatureMap,
    ids: &[AlgorithmId],
    run: usize,
) -> Result<RunOutput> {
    let rs = run_seed(cfg.experiment.seed, run);
    let (plan, test) = run_inputs(cfg, data, fm, rs)?;
    let eval = MseEvaluator::new(&test);
    let k = cfg.clients.count;
    let horizon = plan.horizon();
    let mut src = MappedStream::new(&plan, fm);
    let mut env = Environment::new(cfg.availability_model()?, cfg.delay_model()?, rs);
    let mut algs: Vec<Box<dyn FederatedAlgorithm>> =
        ids.iter().map(|&id| build_algorithm(id, &cfg.algorithm_params(id), rs)).collect::<Result<_>>()?;
    let mut traces: Vec<RunTrace> = ids
        .iter()
        .map(|_| RunTrace {
            mse: Vec::with_capacity(horizon),
            uplink: Vec::with_capacity(horizon),
            downlink: Vec::with_capacity(horizon),
            participations: 0,
        })
        .collect();
    let mut samples = vec![None; k];
    let mut events = vec![ClientEvent { has_data: false, available: false, delay: Delay::Discarded }; k];
    let mut available_events = 0u64;
    for n in 0..horizon {
        src.fill_round(n, &mut samples)?;
        let has: Vec<bool> = samples.iter().map(Option::is_some).collect();
        env.draw_round(n, &has, &mut events);
        available_events += events.iter().filter(|e| e.available && e.has_data).count() as u64;
        let round = Round { iteration: n, samples: &samples, events: &events };
        for (alg, tr) in algs.iter_mut().zip(&mut traces) {
            let t = alg.step(&round)?;
            let (up, down) = (tr.uplink.last().copied().unwrap_or(0), tr.downlink.last().copied().unwrap_or(0));
            tr.uplink.push(up + t.uplink);
            tr.downlink.push(down + t.downlink);
            tr.participations += t.participants;
            tr.mse.push(eval.eval(alg.global_model()));
        }
    }
    Ok(RunOutput { traces, available_events })
}

/// Monte-Carlo aggregate of one algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmResult {
    pub algorithm: AlgorithmId,
    pub mu: f64,
    /// MSE-test averaged over runs, per iteration.
    pub mse: Vec<f64>,
    /// Cumulative uplink parameters summed over runs.
    pub uplink: Vec<u64>,
    pub downlink: Vec<u64>,
    pub participations: u64,
}

impl AlgorithmResult {
    pub fn mse_db(&self) -> Vec<f64> {
        self.mse.iter().map(|&v| to_db(v)).collect()
    }

    /// MSE-test in dB averaged over the last 5% of iterations.
    pub fn final_mse_db(&self) -> f64 {
        let w = (self.mse.len() / 20).max(1);
        let tail = &self.mse[self.mse.len() - w..];
        to_db(tail.iter().sum::<f64>() / w as f64)
    }

    pub fn records(&self) -> Vec<MetricsRecord> {
        let label = self.algorithm.to_string();
        (0..self.mse.len())
            .map(|n| MetricsRecord {
                algorithm: label.clone(),
                iteration: n,
                mse_test_db: to_db(self.mse[n]),
                uplink_params: self.uplink[n],
                downlink_params: self.downlink[n],
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub runs: usize,
    pub horizon: usize,
    pub available_events: u64,
    pub algorithms: Vec<AlgorithmResult>,
}

impl ExperimentResult {
    pub fn get(&self, id: AlgorithmId) -> Option<&AlgorithmResult> {
        self.algorithms.iter().find(|a| a.algorithm == id)
    }

    /// Uplink parameters over `D` times the available-with-data events.
    pub fn comm_ratio(&self, id: AlgorithmId, dim: usize) -> Option<f64> {
        let a = self.get(id)?;
        let total = *a.uplink.last()? as f64;
        Some(if self.available_events == 0 { 0.0 } else { total / (dim as f64 * self.available_events as f64) })
    }
}

/// Runs the configured variants.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    run_algorithms(cfg, &cfg.algorithms.variants)
}

/// Runs `ids` under `cfg`, all runs in parallel, merged in run order.
pub fn run_algorithms(cfg: &ExperimentConfig, ids: &[AlgorithmId]) -> Result<ExperimentResult> {
    cfg.validate()?;
    if ids.is_empty() {
        return Err(Error::invalid("no algorithms to run"));
    }
    let data = DataSource::from_config(cfg)?;
    run_with_data(cfg, &data, ids)
}

pub fn run_with_data(cfg: &ExperimentConfig, data: &DataSource, ids: &[AlgorithmId]) -> Result<ExperimentResult> {
    let runs = cfg.experiment.mc_runs;
    let fm = feature_map(cfg, data)?;
    let outputs: Vec<Result<RunOutput>> =
        (0..runs).into_par_iter().map(|r| run_single(cfg, data, &fm, ids, r)).collect();
    let mut merged: Option<ExperimentResult> = None;
    for out in outputs {
        let out = out?;
        let m = merged.get_or_insert_with(|| ExperimentResult {
            runs,
            horizon: out.traces[0].mse.len(),
            available_events: 0,
            algorithms: ids
                .iter()
                .map(|&id| AlgorithmResult {
                    algorithm: id,
                    mu: cfg.mu_for(id),
                    mse: vec![0.0; out.traces[0].mse.len()],
                    uplink: vec![0; out.traces[0].mse.len()],
                    downlink: vec![0; out.traces[0].mse.len()],
                    participations: 0,
                })
                .collect(),
        });
        m.available_events += out.available_events;
        for (a, t) in m.algorithms.iter_mut().zip(out.traces) {
            a.mse.iter_mut().zip(&t.mse).for_each(|(x, v)| *x += v / runs as f64);
            a.uplink.iter_mut().zip(&t.uplink).for_each(|(x, v)| *x += v);
            a.downlink.iter_mut().zip(&t.downlink).for_each(|(x, v)| *x += v);
            a.participations += t.participations;
        }
    }
    merged.ok_or_else(|| Error::invalid("at least one Monte-Carlo run is required"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::Coordination;
    use crate::harness::presets::preset;

    fn tiny() -> ExperimentConfig {
        let mut c = preset("default-async", 1.0 / 32.0).unwrap();
        c.model.dim = 16;
        c.model.m = 2;
        c.experiment.mc_runs = 3;
        c.experiment.test_size = 200;
        c
    }

    #[test]
    fn same_variant_twice_gives_identical_tables() {
        let mut c = tiny();
        c.experiment.mc_runs = 1;
        let id = AlgorithmId::PaoFed { coordination: Coordination::Uncoordinated, version: 1 };
        let r = run_algorithms(&c, &[id, id]).unwrap();
        assert_eq!(r.algorithms[0], r.algorithms[1]);
    }

    #[test]
    fn deterministic_given_seed() {
        let c = tiny();
        let ids = [AlgorithmId::OnlineFedSgd, AlgorithmId::PsoFed];
        assert_eq!(run_algorithms(&c, &ids).unwrap(), run_algorithms(&c, &ids).unwrap());
    }

    #[test]
    fn one_row_per_iteration_and_monotone_counters() {
        let c = tiny();
        let r = run_experiment(&c).unwrap();
        for a in &r.algorithms {
            let rec = a.records();
            assert_eq!(rec.len(), c.experiment.horizon);
            assert!(rec.windows(2).all(|w| w[0].uplink_params <= w[1].uplink_params
                && w[0].downlink_params <= w[1].downlink_params));
        }
    }

    #[test]
    fn environment_trace_ignores_algorithm_choice() {
        let c = tiny();
        let a = run_algorithms(&c, &[AlgorithmId::OnlineFedSgd]).unwrap();
        let b = run_algorithms(&c, &[AlgorithmId::PsoFed, AlgorithmId::OnlineFed]).unwrap();
        assert_eq!(a.available_events, b.available_events);
    }
}
