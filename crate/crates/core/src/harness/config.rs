//! Experiment configuration, stored as TOML with one table per concern.
//!
//! Every field has a default, so a file only lists what it changes:
//!
//! ```toml
//! [experiment]
//! name = "desk"
//! mc_runs = 10
//!
//! [clients]
//! count = 32
//! group_sizes = [62, 125, 187, 250]
//!
//! [algorithms]
//! variants = ["pao-fed-u1", "online-fedsgd"]
//! default_mu = 0.4
//! mu = { online-fedsgd = 0.3 }
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::algorithms::{AlgorithmId, AlgorithmParams, Coordination};
use crate::analysis::SecondOrderTerm;
use crate::environment::{AvailabilityModel, DelayModel, TieRule};
use crate::error::{Error, Result};
use crate::stream::{CsvOptions, Normalization, DEFAULT_GROUP_SIZES, SYNTH_INPUT_DIM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub model: ModelSection,
    pub clients: ClientSection,
    pub delay: DelaySection,
    pub algorithms: AlgorithmSection,
    pub data: DataSection,
    pub analysis: AnalysisSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub name: String,
    pub seed: u64,
    pub mc_runs: usize,
    /// Iterations `N`.
    pub horizon: usize,
    /// Size `T` of the synthetic test set.
    pub test_size: usize,
    pub output_dir: PathBuf,
    /// Free-form provenance, e.g. the rounding applied by a scaled preset.
    pub note: String,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            seed: 1,
            mc_runs: 100,
            horizon: 2000,
            test_size: 2000,
            output_dir: PathBuf::from("results"),
            note: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Input dimension `L` (synthetic data only; CSV data use their columns).
    pub input_dim: usize,
    /// Feature dimension `D`.
    pub dim: usize,
    /// Parameters shared per message.
    pub m: usize,
    /// Gaussian kernel width; the median heuristic when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel_width: Option<f64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { input_dim: SYNTH_INPUT_DIM, dim: 200, m: 4, kernel_width: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClientSection {
    /// Number of clients `K`.
    pub count: usize,
    /// Samples per client in each data group.
    pub group_sizes: Vec<usize>,
    /// Participation probability of each availability group; every data
    /// group is split evenly into these.
    pub availability: Vec<f64>,
    pub noise_variance: f64,
}

impl Default for ClientSection {
    fn default() -> Self {
        Self {
            count: 256,
            group_sizes: DEFAULT_GROUP_SIZES.to_vec(),
            availability: vec![0.25, 0.1, 0.025, 0.005],
            noise_variance: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DelaySection {
    /// `delta`: probability of being late by at least one more step.
    pub tail: f64,
    pub l_max: usize,
    /// Delay granularity `g`.
    pub step: usize,
}

impl Default for DelaySection {
    fn default() -> Self {
        Self { tail: 0.2, l_max: 10, step: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlgorithmSection {
    pub variants: Vec<AlgorithmId>,
    pub alpha_base: f64,
    pub full_downlink: bool,
    pub tie_rule: TieRule,
    /// Participants per iteration for Online-Fed and PSO-Fed; budget
    /// matched when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subset: Option<usize>,
    pub default_mu: f64,
    /// Per-algorithm learning rates, keyed by algorithm name.
    pub mu: BTreeMap<String, f64>,
}

impl Default for AlgorithmSection {
    fn default() -> Self {
        Self {
            variants: vec![
                AlgorithmId::PaoFed { coordination: Coordination::Coordinated, version: 2 },
                AlgorithmId::PaoFed { coordination: Coordination::Uncoordinated, version: 1 },
                AlgorithmId::PaoFed { coordination: Coordination::Uncoordinated, version: 2 },
                AlgorithmId::OnlineFed,
                AlgorithmId::OnlineFedSgd,
                AlgorithmId::PsoFed,
            ],
            alpha_base: 0.2,
            full_downlink: false,
            tie_rule: TieRule::KeepAll,
            subset: None,
            default_mu: 0.4,
            mu: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Stream a CSV file instead of the synthetic task.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<CsvSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: PathBuf,
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

impl CsvSource {
    pub fn options(&self) -> CsvOptions {
        CsvOptions {
            feature_columns: self.feature_columns.clone(),
            target_column: self.target_column.clone(),
            normalization: self.normalization,
            test_fraction: self.test_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    /// PAO-Fed variant whose MSD is predicted.
    pub variant: AlgorithmId,
    /// Iterations of the transient curve.
    pub iterations: usize,
    /// Inputs used to estimate `R_k`.
    pub correlation_samples: usize,
    /// Monte-Carlo draws for `Q_A`, `Q_B`; exact enumeration when absent
    /// and feasible.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_samples: Option<usize>,
    pub second_order: SecondOrderTerm,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            variant: AlgorithmId::PaoFed { coordination: Coordination::Uncoordinated, version: 1 },
            iterations: 2000,
            correlation_samples: 100_000,
            q_samples: None,
            second_order: SecondOrderTerm::Factorized,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::ConfigParse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::FileNotFound(path.to_path_buf()));
        }
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::ConfigParse(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    /// Learning rate used for `id`.
    pub fn mu_for(&self, id: AlgorithmId) -> f64 {
        self.algorithms.mu.get(&id.to_string()).copied().unwrap_or(self.algorithms.default_mu)
    }

    pub fn set_mu(&mut self, id: AlgorithmId, mu: f64) {
        self.algorithms.mu.insert(id.to_string(), mu);
    }

    pub fn delay_model(&self) -> Result<DelayModel> {
        DelayModel::new(self.delay.tail, self.delay.l_max, self.delay.step)
    }

    pub fn availability_model(&self) -> Result<AvailabilityModel> {
        AvailabilityModel::grouped(self.clients.count, self.clients.group_sizes.len(), &self.clients.availability)
    }

    pub fn algorithm_params(&self, id: AlgorithmId) -> AlgorithmParams {
        AlgorithmParams {
            clients: self.clients.count,
            dim: self.model.dim,
            m: self.model.m,
            mu: self.mu_for(id),
            l_max: self.delay.l_max,
            alpha_base: self.algorithms.alpha_base,
            full_downlink: self.algorithms.full_downlink,
            subset: self.algorithms.subset,
            tie_rule: self.algorithms.tie_rule,
        }
    }

    /// Checks every field and reports all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        let e = &self.experiment;
        if e.mc_runs == 0 {
            v.push("experiment.mc_runs must be at least 1".to_string());
        }
        if e.horizon == 0 {
            v.push("experiment.horizon must be at least 1".to_string());
        }
        if e.test_size == 0 && self.data.csv.is_none() {
            v.push("experiment.test_size must be at least 1".to_string());
        }
        let m = &self.model;
        if m.dim == 0 {
            v.push("model.dim must be at least 1".to_string());
        }
        if m.m == 0 || m.m > m.dim {
            v.push(format!("model.m = {} must lie in 1..={}", m.m, m.dim));
        }
        if self.data.csv.is_none() && m.input_dim != SYNTH_INPUT_DIM {
            v.push(format!("model.input_dim must be {SYNTH_INPUT_DIM} for the synthetic task"));
        }
        if let Some(w) = m.kernel_width {
            if !(w > 0.0 && w.is_finite()) {
                v.push(format!("model.kernel_width = {w} must be positive"));
            }
        }
        let c = &self.clients;
        let groups = c.group_sizes.len();
        if c.count == 0 {
            v.push("clients.count must be at least 1".to_string());
        }
        if groups == 0 {
            v.push("clients.group_sizes must not be empty".to_string());
        } else if c.count % groups != 0 {
            v.push(format!("clients.count = {} is not divisible by {groups} data groups", c.count));
        }
        if self.data.csv.is_none() {
            if let Some(&s) = c.group_sizes.iter().find(|&&s| s > e.horizon) {
                v.push(format!("group size {s} exceeds the horizon {} (one sample per iteration)", e.horizon));
            }
        }
        if c.availability.is_empty() {
            v.push("clients.availability must not be empty".to_string());
        }
        if let Some(p) = c.availability.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            v.push(format!("availability {p} outside [0, 1]"));
        }
        if !(c.noise_variance >= 0.0 && c.noise_variance.is_finite()) {
            v.push(format!("clients.noise_variance = {} must be non-negative", c.noise_variance));
        }
        let d = &self.delay;
        if !(0.0..1.0).contains(&d.tail) {
            v.push(format!("delay.tail = {} must lie in [0, 1)", d.tail));
        }
        if d.step == 0 {
            v.push("delay.step must be at least 1".to_string());
        }
        let a = &self.algorithms;
        if a.variants.is_empty() {
            v.push("algorithms.variants must not be empty".to_string());
        }
        if !(0.0..=1.0).contains(&a.alpha_base) {
            v.push(format!("algorithms.alpha_base = {} must lie in [0, 1]", a.alpha_base));
        }
        if !(a.default_mu > 0.0 && a.default_mu.is_finite()) {
            v.push(format!("algorithms.default_mu = {} must be positive", a.default_mu));
        }
        for (name, mu) in &a.mu {
            if name.parse::<AlgorithmId>().is_err() {
                v.push(format!("algorithms.mu names unknown algorithm `{name}`"));
            }
            if !(*mu > 0.0 && mu.is_finite()) {
                v.push(format!("learning rate {mu} for {name} must be positive"));
            }
        }
        if let Some(csv) = &self.data.csv {
            if csv.feature_columns.is_empty() {
                v.push("data.csv.feature_columns must not be empty".to_string());
            }
            if !(csv.test_fraction > 0.0 && csv.test_fraction < 1.0) {
                v.push(format!("data.csv.test_fraction = {} must lie in (0, 1)", csv.test_fraction));
            }
        }
        let an = &self.analysis;
        if !an.variant.is_pao_fed() {
            v.push(format!("analysis.variant must be a PAO-Fed variant, got {}", an.variant));
        }
        if an.correlation_samples == 0 {
            v.push("analysis.correlation_samples must be at least 1".to_string());
        }
        if an.q_samples == Some(0) {
            v.push("analysis.q_samples must be at least 1".to_string());
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_are_valid_and_match_reference_setup() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        assert_eq!(c.clients.count, 256);
        assert_eq!(c.model.dim, 200);
        assert_eq!((c.delay.tail, c.delay.l_max), (0.2, 10));
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c = ExperimentConfig::from_toml_str("[model]\nm = 8\n\n[algorithms]\nmu = { pao-fed-u1 = 0.3 }\n").unwrap();
        assert_eq!(c.model.m, 8);
        assert_eq!(c.mu_for("pao-fed-u1".parse().unwrap()), 0.3);
        assert_eq!(c.mu_for(AlgorithmId::OnlineFed), 0.4);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = ExperimentConfig::from_toml_str("[model]\nwidth = 3\n").unwrap_err();
        assert_eq!(err.category(), "config-parse");
    }

    #[test]
    fn all_violations_are_listed() {
        let mut c = ExperimentConfig::default();
        c.model.m = 500;
        c.delay.tail = 1.0;
        c.clients.availability = vec![1.5];
        match c.validate() {
            Err(Error::InvalidConfig(v)) => assert_eq!(v.len(), 3, "{v:?}"),
            other => panic!("expected invalid config, got {other:?}"),
        }
    }

    fn arb_config() -> impl Strategy<Value = ExperimentConfig> {
        (
            (any::<u64>(), 1usize..500, 1usize..5000, 1usize..5000),
            (1usize..300, 1usize..20, proptest::option::of(0.01f64..10.0)),
            (1usize..64, prop::collection::vec(0.0f64..=1.0, 1..6), 0.0f64..1.0),
            (0.0f64..1.0, 0usize..40, 1usize..5),
            (0.0f64..=1.0, any::<bool>(), 1e-4f64..2.0, prop::collection::btree_map("pao-fed-[cu][012]", 1e-4f64..2.0, 0..4)),
            proptest::option::of(1usize..50),
        )
            .prop_map(|(e, m, c, d, a, subset)| {
                let mut cfg = ExperimentConfig::default();
                cfg.experiment.seed = e.0;
                cfg.experiment.mc_runs = e.1;
                cfg.experiment.horizon = e.2;
                cfg.experiment.test_size = e.3;
                cfg.model.dim = m.0;
                cfg.model.m = m.1.min(m.0);
                cfg.model.kernel_width = m.2;
                cfg.clients.count = c.0 * 4;
                cfg.clients.availability = c.1;
                cfg.clients.noise_variance = c.2;
                cfg.clients.group_sizes = vec![e.2 / 4, e.2 / 3, e.2 / 2, e.2];
                cfg.delay = DelaySection { tail: d.0, l_max: d.1, step: d.2 };
                cfg.algorithms.alpha_base = a.0;
                cfg.algorithms.full_downlink = a.1;
                cfg.algorithms.default_mu = a.2;
                cfg.algorithms.mu = a.3;
                cfg.algorithms.subset = subset;
                cfg
            })
    }

    proptest! {
        #[test]
        fn toml_round_trip_is_lossless(cfg in arb_config()) {
            cfg.validate().unwrap();
            let text = cfg.to_toml_string().unwrap();
            let back = ExperimentConfig::from_toml_str(&text).unwrap();
            prop_assert_eq!(back, cfg);
        }
    }
}
