//! Tuning theory, samplers and diagnostics for pseudo-marginal random-walk
//! Metropolis (PsMRWM).
//!
//! The crate is organised around the quantities that govern a pseudo-marginal
//! chain whose log-target estimate carries additive noise `W`:
//!
//! * [`noise`]: the proposal-noise law `g*`, its exponentially tilted
//!   stationary counterpart and the noise difference `B = W* - W`.
//! * [`limit`]: limiting acceptance rate, expected squared jump distance
//!   (ESJD), relative efficiency and the finite-dimensional Gaussian-target
//!   corrections.
//! * [`tuning`]: optimisers for the efficiency surfaces.
//! * [`sampler`]: the pseudo-marginal random-walk kernel and its run
//!   statistics.
//! * [`filter`]: bootstrap particle filter, the Lotka-Volterra jump process
//!   and a linear-Gaussian model with an exact Kalman likelihood.
//! * [`diagnostics`]: noise samples, variance-versus-m regression, QQ data and
//!   moment-generating-function diagnostics.
//! * [`study`]: the (m, gamma) simulation study that ties everything together.
//!
//! Data-parallel loops (grid sweeps, Monte Carlo averages, replicated filters,
//! study cells) go through [`par`], which uses rayon when the `parallel`
//! feature is enabled and falls back to plain iteration otherwise. Output is
//! identical in both modes.

// Guards of the form `!(x > 0.0)` are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
mod error;
pub mod filter;
pub mod limit;
pub mod noise;
pub mod numeric;
pub mod par;
pub mod rng;
pub mod sampler;
pub mod study;
pub mod tuning;

pub use error::{Error, Result};
