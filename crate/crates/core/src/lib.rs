//! Chance-constrained stochastic AC optimal power flow with neural-network
//! dispatch policies.
//!
//! A policy maps a load realization to generator setpoints. It is trained by
//! stochastic primal-dual updates whose gradients flow through an
//! implicit-function sensitivity analysis of the AC power flow equations.
//!
//! Module map:
//! - [`caseio`]: MATPOWER case parsing, admittance matrix, variable partition.
//! - [`acpf`]: Newton power flow, constraint functions and their Jacobians.
//! - [`policy`]: the feed-forward policy, its weight Jacobian, checkpoints.
//! - [`ccsopf`]: logistic surrogate, sampling, primal-dual trainer, metrics.
//! - [`baseline`]: per-sample deterministic OPF used as a benchmark.
//! - [`cli`]: command implementations behind the `ccopf` binary.

pub mod acpf;
pub mod baseline;
pub mod caseio;
pub mod ccsopf;
pub mod cli;
mod error;
mod linalg;
pub mod policy;

pub use error::{Error, Result};
