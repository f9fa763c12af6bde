//! Sparse random Lotka-Volterra ecosystems.
//!
//! The interaction matrix is `M = (Delta o A) / (alpha sqrt(d))` where
//! `Delta` is the 0/1 adjacency pattern of a directed d-regular graph and `A`
//! has independent standard Gaussian entries. The crate covers:
//!
//! - [`pattern`]: block-permutation, proportional and general d-regular patterns;
//! - [`interaction`]: assembly, sparse products and spectral diagnostics;
//! - [`equilibrium`]: the feasibility equation `x = 1 + M x`, its Gaussian
//!   and remainder terms, and nonnegative (saturated) equilibria;
//! - [`dynamics`]: ODE integration and Jacobian stability spectra;
//! - [`experiments`]: seeded, parallel Monte Carlo drivers with CSV/JSON output.

pub mod dynamics;
pub mod equilibrium;
pub mod error;
pub mod experiments;
pub mod interaction;
pub mod pattern;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub use interaction::{InteractionMatrix, Scaling};
pub use pattern::{AdjacencyPattern, PatternModel, Permutation};
