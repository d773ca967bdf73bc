//! Simulation and inference for subcritical continuous-time birth-and-death
//! processes with multiple births.
//!
//! The process lives on the non-negative integers. From state `i >= 1`, a
//! birth event occurs at rate `i * lambda` and replaces one individual by
//! `k >= 2` new ones with probability `p_k`; a death event occurs at rate
//! `i * mu` and removes one individual. State 0 is absorbing. Throughout we
//! require the growth rate `rho = lambda (m - 1) - mu` to be negative, so
//! extinction is certain.
//!
//! The crate provides:
//!
//! * [`model`] — parameter validation and every closed-form quantity of the
//!   process and of its survival-conditioned limit (the Q-process),
//! * [`sim`] — exact event-driven simulation and sufficient statistics,
//! * [`qprocess`] — two independent Q-process samplers (generator-based and
//!   spine-based) whose agreement is a built-in self check,
//! * [`conditioned`] — exact, rejection and multilevel-splitting samplers of
//!   the process conditioned on survival at a fixed horizon,
//! * [`spectral`] — a truncated-generator linear-algebra oracle
//!   (Perron–Frobenius triple, quasi-stationary distribution, conditioned and
//!   Q-process marginals),
//! * [`estimators`] — classical and bias-corrected parameter estimators with
//!   confidence intervals.

pub mod conditioned;
pub mod estimators;
pub mod model;
pub mod qprocess;
pub mod rng;
pub mod sim;
pub mod spectral;
pub mod stats;
pub mod trajectory;

pub use model::{DerivedQuantities, ModelError, ModelParams, OffspringLaw};
pub use rng::SimRng;
pub use trajectory::{Event, EventKind, SufficientStats, Trajectory};
