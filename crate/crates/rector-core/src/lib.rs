//! Algorithmic core for window-based flow correlation.
//!
//! Everything in this crate is pure computation over in-memory values:
//! the synthetic trace model, window featurization, the GRU +
//! attention-MIL encoder with exact analytic gradients, triplet
//! training, the inverted-file index, and the matching/ROC math.
//! File formats and the command-line driver live in the companion
//! `rector-cli` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod ann;
mod error;
pub mod eval;
pub mod feature;
pub mod math;
pub mod model;
pub mod rng;
pub mod trace;
pub mod train;

pub use error::Error;

pub type Result<T> = core::result::Result<T, Error>;
