//! General first-order methods (GFOMs) for rank-one matrix estimation and
//! generalized linear models: Bayes-optimal AMP, state evolution, the
//! optimality lower bound, and baseline algorithms for phase retrieval.

pub mod denoiser;
pub mod amp;
pub mod bench;
pub mod error;
pub mod oamp;
pub mod prior;
pub mod par;
pub mod phase_retrieval;
pub mod quadrature;
pub mod rng;
pub mod state_evolution;

pub use error::{Error, Result};
