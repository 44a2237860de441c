//! Noninteractive locally differentially private empirical risk minimization
//! for generalized linear convex losses.
//!
//! Each player perturbs its record once with Gaussian noise and ships many
//! independent noisy copies. The server approximates the (smoothed) loss
//! derivative by a Bernstein polynomial and multiplies fresh copies together
//! to obtain unbiased estimates of every monomial, which yields a biased but
//! controlled stochastic gradient oracle for projected SGD.
//!
//! This crate is `no_std` (it needs `alloc`). File formats, configuration and
//! the command line live in the `ldperm-cli` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod approx;
pub mod baseline;
pub mod data;
mod error;
pub mod losses;
pub mod math;
pub mod oracle;
pub mod privacy;
pub mod solver;

pub use error::{Error, Result};

/// Deterministic generator used for every random stream in the crate.
pub type StreamRng = rand_chacha::ChaCha8Rng;
