//! Optimal dispatch and nodal pricing for radial distribution networks.
//!
//! The crate builds a convex quadratic OPF on the modified DistFlow model,
//! solves it with a sparse interior-point method, and prices energy with two
//! mechanisms: marginal-loss DLMPs and loss-allocation DLPs. An exact AC
//! power flow serves as the reference for voltages, losses and prices.

pub mod acpf;
pub mod error;
pub mod mdistflow;
pub mod mdopf;
pub mod network;
pub mod par;
pub mod pricing;
pub mod qcqp;
pub mod scenario;

pub use error::{Error, ErrorKind, Result};
