//! Surrogate-based global sensitivity analysis: polynomial chaos expansions,
//! Gaussian process regression, and Sobol' index estimation.

pub mod benchmarks;
pub mod distributions;
pub mod error;
pub mod gp;
pub mod harness;
pub mod orthopoly;
pub mod pce;
pub mod rng;
pub mod sobol;

pub use error::{Error, Result};
