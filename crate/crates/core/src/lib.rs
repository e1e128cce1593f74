//! Plug-and-play proximal-gradient restoration (PR-SANS) for small-angle
//! neutron scattering detector images.
//!
//! The crate bundles:
//!
//! * [`priors`]: denoisers usable inside the iteration (Gaussian-mixture MMSE,
//!   total variation, Gaussian blur, learned CNN) and a wrapper that injects a
//!   controlled per-call error.
//! * [`learned`]: a small residual CNN with hand-written backpropagation,
//!   pre-training and few-shot adaptation.
//! * [`solver`]: the proximal-gradient iteration itself.
//! * [`theory`]: numerical certification of its convergence bound on
//!   analytic problems.
//! * [`sans`]: scattering geometry, synthetic patterns, counting noise and
//!   azimuthal reduction to `I(Q)`.
//! * [`experiment`] and [`cli`]: reproducible config-driven runs.

pub mod cli;
pub mod error;
pub mod experiment;
pub mod image;
pub mod learned;
pub mod metrics;
pub mod priors;
pub mod rng;
pub mod sans;
pub mod solver;
pub mod theory;

pub use error::{Error, Result};
pub use image::{DetectorImage, Dims, Rescale};
pub use metrics::{compute_metrics, compute_metrics_slices, MetricsRecord};
pub use priors::{EpsilonSchedule, GmmPrior, PriorHandle};
pub use solver::{pr_sans_solve, pr_sans_step, prox_data_fidelity, SolveConfig, SolveTrace, TraceLevel};
