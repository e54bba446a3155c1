//! Semi-implicit Euler-Maruyama time stepping for semilinear parabolic SPDEs with additive
//! spectral Q-Wiener noise, on P1 finite-element and cell-centered finite-volume grids.
//!
//! The modified scheme advances the deterministic part implicitly and adds the stochastic
//! convolution, which is sampled exactly mode by mode, instead of a raw Brownian increment.
//! [`harness`] runs Monte-Carlo strong-convergence studies of both schemes.

pub mod config;
pub mod darcy;
pub mod error;
pub mod fem;
pub mod fvm;
pub mod harness;
pub mod mesh;
pub mod noise;
pub mod schemes;
pub mod sparse;

pub use error::{Error, Result};
