//! Robust functional regression with the extended t-process.
//!
//! Curves yᵢ(t) = fᵢ(xᵢ(t)) + εᵢ(t) share a heavy-tailed process model whose
//! degrees of freedom ν control robustness. Three estimators are provided:
//!
//! * GPR, the Gaussian limit ν → ∞ ([`estimate::fit_gpr`]);
//! * eTPR by maximum likelihood ([`estimate::fit_etpr_mle`]);
//! * BeTPR, the MAP estimate under hyper-priors on every parameter including ν
//!   ([`estimate::fit_betpr_map`]), optionally with spike-and-slab selection
//!   of kernel parameters ([`estimate::select_spike_slab`]).
//!
//! Predictions come from [`predict`], simulation studies from [`simulate`],
//! and the `etpr` binary wraps everything in [`cli`].

pub mod cli;
pub mod emtd;
pub mod error;
pub mod estimate;
pub mod io;
pub mod kernels;
pub mod model;
pub mod numerics;
pub mod optim;
pub mod predict;
pub mod simulate;

pub use emtd::{EmtdSpec, PriorConfig};
pub use error::{EtprError, Result};
pub use estimate::{FitOptions, FitResult, Method};
pub use kernels::KernelParams;
pub use model::{CurveData, EtprModel};
pub use predict::Predictive;
pub use simulate::{SimConfig, SimMethod};
