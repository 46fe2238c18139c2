//! Simulation and analysis of partial-sharing asynchronous online federated
//! learning over random Fourier feature kernel LMS.

pub mod algorithms;
pub mod analysis;
pub mod environment;
pub mod error;
pub mod harness;
pub mod rff;
pub mod rng;
pub mod stream;

pub use error::{Error, Result};
