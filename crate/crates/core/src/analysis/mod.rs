//! Extended-system analysis: expectations of the merge and aggregation
//! matrices, the mean-square operator, step-size bounds and MSD
//! predictions.

pub mod dense;
pub mod extended;
pub mod kron;
pub mod linalg;
pub mod msd;
pub mod sparse;

pub use dense::Mat;
pub use extended::{Expectation, Expectations, ExtendedSystem, SystemConfig, MAX_EXACT_OUTCOMES};
pub use kron::{block_kron, block_kron_sparse, bvec, bvec_inv};
pub use linalg::{estimate_correlation, gmres, max_eigenvalue, power_iteration, symmetric_eigenvalues};
pub use msd::{
    build_f, mean_trajectory, msd_steady_state, msd_transient, noise_vector, predict_msd, simulate_msd,
    spectral_radius, step_size_bounds, FOperator, MsdPrediction, SecondOrderTerm,
};
pub use sparse::Csr;
