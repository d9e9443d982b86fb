//! Reciprocal-space Ewald summation written as a sum of Kronecker products.
//!
//! Mode weights `α(|m|)` are decomposed into separable terms
//! ([`alphaskp`]), particles are interpolated onto per-cell product grids
//! ([`interpolation`]), and each term becomes three real axis operands
//! ([`symfourier`]) applied by the shuffle product ([`kron`]) or, split over a
//! grid of ranks, by [`parallel`]. [`oracle`] holds the brute-force references.

// `!(x > 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alphaskp;
pub mod cli;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod interpolation;
pub mod kron;
pub mod oracle;
pub mod parallel;
pub mod symfourier;

pub use error::{KpmeError, Result};
