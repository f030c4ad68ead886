//! Interacting-particle Euler-Maruyama simulation of McKean-Vlasov SDEs
//! driven by symmetric alpha-stable Lévy noise,
//!
//! ```text
//! dX_t = b(X_t, Law(X_t)) dt + dL_t,
//! ```
//!
//! together with the machinery needed to measure its convergence
//! empirically: exact Wasserstein distances between empirical measures,
//! admissible Hölder drifts with a mean-field interaction, synchronously
//! coupled particle runs and log-log slope fits.
//!
//! Module map:
//! - [`noise`]: alpha-stable increments keyed by counter-based streams.
//! - [`empirical`]: equal-weight empirical measures and optimal transport.
//! - [`drift`]: bounded Hölder drifts, mollification, admissibility checks.
//! - [`integrator`]: the particle system and its Euler-Maruyama scheme.
//! - [`harness`]: rate studies producing [`harness::StudyReport`]s.
//! - [`config`]: the JSON experiment file shared with the CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod drift;
pub mod empirical;
mod error;
pub mod harness;
pub mod integrator;
pub mod noise;
pub mod stats;

pub use error::{Error, Result};
