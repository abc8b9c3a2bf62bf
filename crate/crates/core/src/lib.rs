//! Sobolev training for coordinate-based MLPs.
//!
//! Networks are supervised on signal values and on first-order derivatives
//! approximated with finite differences. Input derivatives of the network are
//! carried as forward-mode tangents and the parameter gradient of the joint
//! loss is obtained with a single reverse pass over primal and tangent chains.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, IO and the command
//! line live in the `sobolev-inr` companion crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

mod error;
mod math;

pub mod encoding;
pub mod filters;
pub mod grid;
pub mod metrics;
pub mod network;
pub mod pipelines;
pub mod radiance;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
pub use grid::Grid2D;
pub use rng::Rng;
