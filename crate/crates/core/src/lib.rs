//! Gradient-method variants (floored, rounded, Langevin) with trajectory
//! instrumentation and data-dependent PAC-Bayesian test-error certificates.
//!
//! The crate is organised bottom-up:
//!
//! * [`scalar_bounds`] – Catoni's transform and the right-hand side of every bound.
//! * [`discrete_noise`] – sign-magnitude floor, stochastic rounding and the
//!   discrete lattice prior used for the floored methods.
//! * [`datasets`] – IDX ingestion, synthetic blobs, label corruption, prior splits
//!   and mini-batch sampling.
//! * [`models`] – linear-softmax / MLP / quadratic objectives with exact gradients.
//! * [`optimizers`] – instrumented update rules and the training loop.
//! * [`certifier`] – trajectory logs to bound reports, sweeps and comparisons.
//! * [`concentration_lab`] – enumeration and Monte Carlo checks of the supporting
//!   concentration inequalities.
//! * [`config`] and [`plot`] – run descriptors and dependency-free SVG charts for the CLI.

pub mod certifier;
pub mod concentration_lab;
pub mod config;
pub mod datasets;
pub mod discrete_noise;
mod error;
pub mod models;
pub mod optimizers;
pub mod plot;
pub mod rng;
pub mod scalar_bounds;

pub use error::{Error, Result};
