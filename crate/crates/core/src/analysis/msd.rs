//! Mean and mean-square recursions of the extended system: the operator
//! `F`, step-size bounds, transient and steady-state MSD, plus a
//! simulation counterpart for checking them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algorithms::{FederatedAlgorithm, PartialSharing, Round};
use crate::environment::{AvailabilityModel, ClientEvent, Delay, Environment};
use crate::error::{Error, Result};
use crate::rff::FeatureMap;
use crate::rng::run_seed;
use crate::stream::{LinearStream, SampleSource};

use super::dense::Mat;
use super::extended::{Expectation, Expectations, ExtendedSystem};
use super::kron::{block_kron_sparse, bvec_index};
use super::linalg::{gmres, max_eigenvalue, power_iteration, PowerResult};
use super::sparse::Csr;

/// How `E[(I - mu R_n) (x)_b (I - mu R_n)]` is approximated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SecondOrderTerm {
    /// `(I - mu R_e) (x)_b (I - mu R_e)`.
    #[default]
    Factorized,
    /// `I - mu (I (x)_b R_e) - mu (R_e (x)_b I)`, dropping the `mu^2` term.
    FirstOrder,
}

/// `F = Q_B C Q_A`, kept as its three sparse factors.
#[derive(Debug, Clone)]
pub struct FOperator {
    q_b: Csr,
    c: Csr,
    q_a: Csr,
}

impl FOperator {
    pub fn new(sys: &ExtendedSystem, mu: f64, e: &Expectations, term: SecondOrderTerm) -> Result<Self> {
        let d = sys.dim();
        let n = sys.n_e();
        let r = sys.extended_correlation();
        let id = Csr::identity(n);
        let c = match term {
            SecondOrderTerm::Factorized => {
                let m = Csr::lincomb(1.0, &id, -mu, &r);
                block_kron_sparse(&m, &m, d)?
            }
            SecondOrderTerm::FirstOrder => {
                let ir = block_kron_sparse(&id, &r, d)?;
                let ri = block_kron_sparse(&r, &id, d)?;
                Csr::lincomb(1.0, &Csr::identity(n * n), -mu, &Csr::lincomb(1.0, &ir, 1.0, &ri))
            }
        };
        Ok(Self { q_b: e.q_b.clone(), c, q_a: e.q_a.clone() })
    }

    pub fn dim(&self) -> usize {
        self.q_a.rows()
    }

    /// `y = F x`.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let t = self.q_a.mul_vec(x);
        let u = self.c.mul_vec(&t);
        self.q_b.matvec(&u, y);
    }

    /// `y = F^T x`.
    pub fn apply_t(&self, x: &[f64], y: &mut [f64]) {
        let mut t = vec![0.0; self.dim()];
        let mut u = vec![0.0; self.dim()];
        self.q_b.matvec_t(x, &mut t);
        self.c.matvec_t(&t, &mut u);
        self.q_a.matvec_t(&u, y);
    }

    /// Dense copy; only sensible for tiny systems.
    pub fn to_dense(&self) -> Mat {
        self.q_b.matmul(&self.c).matmul(&self.q_a).to_dense()
    }
}

pub fn build_f(sys: &ExtendedSystem, mu: f64, e: &Expectations, term: SecondOrderTerm) -> Result<FOperator> {
    FOperator::new(sys, mu, e, term)
}

/// `rho(F)` by power iteration from the all-ones vector.
pub fn spectral_radius(f: &FOperator) -> PowerResult {
    power_iteration(f.dim(), |x, y| f.apply(x, y), 1e-8, 10_000)
}

/// `(2 / max lambda, 1 / max lambda)` over the client correlations.
pub fn step_size_bounds(correlations: &[Mat]) -> Result<(f64, f64)> {
    let lmax = correlations.iter().map(max_eigenvalue).fold(f64::NEG_INFINITY, f64::max);
    if !(lmax > 0.0) {
        return Err(Error::invalid("correlations need a positive eigenvalue"));
    }
    Ok((2.0 / lmax, 1.0 / lmax))
}

/// `bvec` of an `n_e x n_e` sparse matrix.
fn bvec_sparse(m: &Csr, bs: usize) -> Vec<f64> {
    let blocks = m.rows() / bs;
    let mut v = vec![0.0; m.rows() * m.cols()];
    for (r, c, x) in m.triplets() {
        v[bvec_index(r, c, bs, blocks)] = x;
    }
    v
}

/// `h = Q_B bvec(blockdiag{0, s_1 R_1, ..., s_K R_K, 0, ...})`.
pub fn noise_vector(sys: &ExtendedSystem, e: &Expectations) -> Vec<f64> {
    e.q_b.mul_vec(&bvec_sparse(&sys.noise_correlation(), sys.dim()))
}

/// `sigma_J = bvec(blockdiag{I_D, 0, ...})`, selecting the server deviation.
pub fn server_selector(sys: &ExtendedSystem) -> Vec<f64> {
    let d = sys.dim();
    let mut v = vec![0.0; sys.n_e() * sys.n_e()];
    for i in 0..d {
        v[bvec_index(i, i, d, sys.blocks())] = 1.0;
    }
    v
}

/// `bvec(w~_0 w~_0^T)` for every model starting at zero, so that
/// `w~_0 = 1 (x) w_star`.
pub fn initial_covariance(sys: &ExtendedSystem, w_star: &[f64]) -> Result<Vec<f64>> {
    let d = sys.dim();
    if w_star.len() != d {
        return Err(Error::invalid("w_star must match the model dimension"));
    }
    let n = sys.n_e();
    let mut v = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            v[bvec_index(r, c, d, sys.blocks())] = w_star[r % d] * w_star[c % d];
        }
    }
    Ok(v)
}

/// Predicted server MSD at iterations `0..=iterations` from
/// `c_{n+1} = F c_n + mu^2 h`.
pub fn msd_transient(sys: &ExtendedSystem, f: &FOperator, h: &[f64], mu: f64, c0: &[f64], iterations: usize) -> Vec<f64> {
    let sel = server_selector(sys);
    let msd = |c: &[f64]| sel.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
    let mut c = c0.to_vec();
    let mut next = vec![0.0; c.len()];
    let mut out = Vec::with_capacity(iterations + 1);
    out.push(msd(&c));
    for _ in 0..iterations {
        f.apply(&c, &mut next);
        for (x, hi) in next.iter_mut().zip(h) {
            *x += mu * mu * hi;
        }
        std::mem::swap(&mut c, &mut next);
        out.push(msd(&c));
    }
    out
}

/// `mu^2 h^T (I - F^T)^{-1} sigma_J`.
pub fn msd_steady_state(sys: &ExtendedSystem, f: &FOperator, h: &[f64], mu: f64) -> Result<f64> {
    let rho = spectral_radius(f).value;
    if rho >= 1.0 {
        return Err(Error::NoSteadyState(rho));
    }
    if h.iter().all(|&x| x == 0.0) {
        return Ok(0.0);
    }
    let sel = server_selector(sys);
    let n = f.dim();
    let mut tmp = vec![0.0; n];
    let sol = gmres(
        n,
        |x, y| {
            f.apply_t(x, &mut tmp);
            for ((yi, xi), ti) in y.iter_mut().zip(x).zip(&tmp) {
                *yi = xi - ti;
            }
        },
        &sel,
        1e-12,
        200,
        200_000,
    )?;
    log::debug!("steady state solved in {} iterations, residual {:.2e}", sol.iterations, sol.relative_residual);
    let v = mu * mu * h.iter().zip(&sol.x).map(|(a, b)| a * b).sum::<f64>();
    Ok(v.max(0.0))
}

/// `E[w~_{e,n}]` for `n = 0..=iterations`, from
/// `E[w~_{n+1}] = E[B] (I - mu R_e) E[A] E[w~_n]`.
pub fn mean_trajectory(sys: &ExtendedSystem, e: &Expectations, mu: f64, w0: &[f64], iterations: usize) -> Result<Vec<Vec<f64>>> {
    if w0.len() != sys.n_e() {
        return Err(Error::invalid("initial deviation must have the extended length"));
    }
    let m = Csr::lincomb(1.0, &Csr::identity(sys.n_e()), -mu, &sys.extended_correlation());
    let step = e.mean_b.matmul(&m).matmul(&e.mean_a);
    let mut out = vec![w0.to_vec()];
    for _ in 0..iterations {
        let next = step.mul_vec(out.last().unwrap());
        out.push(next);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsdPrediction {
    /// Predicted server MSD at iterations `0..=N`.
    pub transient: Vec<f64>,
    pub steady_state: f64,
    pub spectral_radius: f64,
    pub mu_bound_mean: f64,
    pub mu_bound_ms: f64,
}

/// Full prediction for models started at zero.
pub fn predict_msd(
    sys: &ExtendedSystem,
    mu: f64,
    w_star: &[f64],
    iterations: usize,
    how: Expectation,
    term: SecondOrderTerm,
) -> Result<MsdPrediction> {
    let (mu_bound_mean, mu_bound_ms) = step_size_bounds(&sys.config().correlations)?;
    let e = sys.expectations(how)?;
    let f = FOperator::new(sys, mu, &e, term)?;
    let h = noise_vector(sys, &e);
    let rho = spectral_radius(&f).value;
    let steady_state = msd_steady_state(sys, &f, &h, mu)?;
    let transient = msd_transient(sys, &f, &h, mu, &initial_covariance(sys, w_star)?, iterations);
    Ok(MsdPrediction { transient, steady_state, spectral_radius: rho, mu_bound_mean, mu_bound_ms })
}

/// Simulated server MSD `||w_star - w_n||^2` at iterations `0..=horizon`,
/// averaged over `runs` independent runs of the partial-sharing engine on a
/// linear data model.
pub fn simulate_msd(
    sys: &ExtendedSystem,
    fm: &FeatureMap,
    w_star: &[f64],
    mu: f64,
    horizon: usize,
    runs: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let cfg = sys.config();
    let noise = cfg.noise[0];
    if cfg.noise.iter().any(|&s| s != noise) {
        return Err(Error::invalid("simulation needs one noise variance for all clients"));
    }
    if runs == 0 {
        return Err(Error::invalid("at least one run is required"));
    }
    let k = sys.clients();
    let curves: Vec<Result<Vec<f64>>> = (0..runs)
        .into_par_iter()
        .map(|run| {
            let rs = run_seed(seed, run);
            let mut src = LinearStream::new(fm.clone(), w_star.to_vec(), noise, k, horizon, rs)?;
            let mut env = Environment::new(AvailabilityModel::per_client(cfg.probs.clone())?, cfg.delay.clone(), rs);
            let mut alg = PartialSharing::new("sim", k, sys.dim(), cfg.m, mu, sys.variant_config(), rs)?;
            let mut samples = vec![None; k];
            let mut events = vec![ClientEvent { has_data: false, available: false, delay: Delay::Discarded }; k];
            let dev = |w: &[f64]| w.iter().zip(w_star).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let mut curve = Vec::with_capacity(horizon + 1);
            curve.push(dev(alg.global_model()));
            for n in 0..horizon {
                src.fill_round(n, &mut samples)?;
                let has: Vec<bool> = samples.iter().map(Option::is_some).collect();
                env.draw_round(n, &has, &mut events);
                alg.step(&Round { iteration: n, samples: &samples, events: &events })?;
                curve.push(dev(alg.global_model()));
            }
            Ok(curve)
        })
        .collect();
    let mut total = vec![0.0; horizon + 1];
    for c in curves {
        for (t, v) in total.iter_mut().zip(c?) {
            *t += v;
        }
    }
    Ok(total.into_iter().map(|v| v / runs as f64).collect())
}
