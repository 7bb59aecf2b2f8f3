//! Joint position / time-delay estimation for the single-integrator plant
//! `ẋ = u`, `y = x(t + τ)`.
//!
//! The crate bundles everything needed to study the augmented-state hybrid
//! EKF that carries the delay `τ` in its state vector:
//!
//! * [`trajectory`]: analytic sinusoid-sum benchmark trajectories.
//! * [`plant`]: the ground-truth delayed measurement source.
//! * [`filter`]: the augmented `[x, τ]` EKF and a known-delay scalar baseline.
//! * [`identifiability`]: reachable sets and executable indistinguishable pairs.
//! * [`consistency`]: NIS/NEES/ANEES, chi-square bounds, RMS and 3σ statistics.
//! * [`montecarlo`]: seeded, order-independent batch experiments.
//! * [`output`]: CSV tables and SVG plots for experiment results.
//! * [`plot`]: the small deterministic SVG renderer behind those plots.

pub mod consistency;
pub mod error;
pub mod filter;
pub mod identifiability;
pub mod montecarlo;
pub mod output;
pub mod plot;
pub mod plant;
pub mod trajectory;

pub use error::{Error, Result};
