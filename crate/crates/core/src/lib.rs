//! Inference on the maximal rank of the volatility matrix of a continuous
//! Itô semimartingale observed at high frequency.
//!
//! - [`detalg`]: determinants, numerical rank and mixed-column sums.
//! - [`itosim`]: model specification, scenarios, Euler simulation and path I/O.
//! - [`ranktest`]: perturbation, block statistics, rank estimator and tests.
//! - [`limitlaw`]: Monte Carlo evaluation of the limiting variables.
//! - [`stats`], [`rng`]: normal distribution helpers and seed derivation.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod detalg;
pub mod itosim;
pub mod limitlaw;
pub mod ranktest;
pub mod rng;
pub mod stats;
