//! Utilization estimation for binary (busy/idle) channels.
//!
//! A probe looks at the channel output at an instant and sees either a packet
//! (and can read its length) or nothing. This crate estimates the utilization
//! factor `U` from such probes, computes exact binomial confidence limits, and
//! picks the smallest probe spacing at which consecutive probes behave as
//! independent draws, given an on/off renewal model of the source.
//!
//! Module map:
//!
//! - [`estimator`]: maximum-likelihood `U`, variances, busy time, rate, confidence limits.
//! - [`models`]: packet-length and gap densities.
//! - [`convolution`]: densities of alternating length/gap sums (`bf1`, `bf2`).
//! - [`hit`]: probability that a probe `H` after a boundary lands in a packet, spacing solver.
//! - [`bayes`]: grid posterior over model parameters driving the probe spacing.
//! - [`diag`]: lag-1 independence diagnostics for binary sequences.
//! - [`sim`]: seeded on/off traffic generation and probing.

// Parameter checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bayes;
pub mod convolution;
pub mod diag;
mod error;
pub mod estimator;
pub mod hit;
pub mod models;
pub mod numeric;
pub mod sim;

pub use error::{Error, Result};
