//! Brownian reduction of a probability vector on the simplex with absorbing
//! faces, the density-matrix layer it drives, one-dimensional Fokker–Planck
//! oracles for the absorption problem, and a Monte Carlo harness comparing
//! the two.

pub mod diffusion;
pub mod error;
pub mod harness;
pub mod oracle;
pub mod quantum;
pub mod rng;
pub mod simplex;

pub use error::{Error, Result};
