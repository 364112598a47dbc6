//! Simulation and numerics for Brownian last passage percolation and the
//! KPZ fixed point: melon transform, Gibbs resampling, barrier kernels and
//! Fredholm determinants.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` deliberately rejects NaN

pub mod bridge;
pub mod error;
pub mod fractal;
pub mod fredholm;
pub mod gibbs;
pub mod kpz;
pub mod lpp;
pub mod quad;
pub mod rng;
pub mod specfun;
pub mod stats;

pub use error::{KpzError, Result};
