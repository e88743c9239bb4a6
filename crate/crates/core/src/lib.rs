//! Sequential probability ratio bisection (SPRB) for noisy one-dimensional
//! root finding.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: regression problems, noise models and the sampling oracle.
//! - [`boundary`]: the moving-boundary stopping rule and stopping-time theory.
//! - [`sprb`]: the bracketing driver (bisection, weight-section, sharp
//!   re-sampling, rollback) in its basic, full and oracle-gamma variants.
//! - [`baselines`]: Robbins–Monro, oracle Robbins–Monro and adaptive SA.
//! - [`confseq`]: stage intervals as a time-uniform confidence sequence.
//! - [`theory`]: rate curves used by diagnostics.
//! - [`harness`]: budget-matched Monte Carlo comparisons and CSV export.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod boundary;
pub mod confseq;
pub mod error;
pub mod harness;
pub mod model;
pub mod sprb;
pub mod theory;

pub use error::{Error, Result};
