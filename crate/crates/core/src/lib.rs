//! Canonical polyadic decomposition of dense tensors by block-randomized
//! stochastic proximal gradient (BrasCPD) and its Adagrad variant (AdaCPD).
//!
//! Each iteration samples one mode and a batch of that mode's fibers, so the
//! per-iteration cost is independent of the full tensor size. The crate also
//! carries the verification oracles (exact ALS block update, subset-enumerated
//! gradient means, brute-force metrics) and the experiment runner behind the
//! `brascpd` CLI.
//!
//! With the default `parallel` feature, full MTTKRP, cost evaluation, tensor
//! synthesis and multi-trial experiments run on rayon; results are
//! bit-identical to the sequential path.

pub mod config;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod gradient;
pub mod hungarian;
pub mod io;
pub mod kr;
pub mod metrics;
pub mod model;
pub mod prox;
pub mod sampling;
pub mod solver;
pub mod synthetic;
pub mod tensor;
pub mod trace;
pub mod verify;

pub use error::{CpdError, Result};
pub use exec::Exec;
pub use model::FactorModel;
pub use prox::Regularizer;
pub use tensor::{DenseTensor, FiberIndex};

/// Crate version, echoed into output headers.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
