//! Bayesian sparse stationary graphical vector autoregressions.
//!
//! Coefficients are sampled in an unconstrained expanded space and mapped
//! onto the stationary region through the companion-matrix spectral radius.
//! Sparsity in the lag matrices comes from a spike-and-slab prior and the
//! innovation precision follows a G-Wishart prior with a sampled graph.

pub mod driver;
pub mod error;
pub mod evaluate;
pub mod ggm;
pub mod gwishart;
pub mod indicators;
pub mod io;
pub mod likelihood;
pub mod nuts;
pub mod priors;
pub mod simulate;
pub mod stationary;
pub mod types;

pub use error::{Error, Result};
pub use types::*;
