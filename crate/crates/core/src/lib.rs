//! Discretized mean field games with common noise.
//!
//! The common noise is discretized by a scenario tree ([`grid`]), the
//! population by adapted flows of empirical measures ([`measures`]), and the
//! representative player's problem is solved by backward dynamic programming
//! ([`control`]). [`equilibrium`] iterates the best-response map to a fixed
//! point and certifies it.

pub mod cli;
pub mod config;
pub mod control;
pub mod equilibrium;
pub mod error;
pub mod grid;
pub mod measures;
pub mod model;
pub mod oracle;
pub mod relaxed;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};
