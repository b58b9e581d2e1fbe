//! Reduction of linear(ized) Langevin dynamics to a generalized Langevin
//! equation on a chosen subspace: exact matrix-valued memory kernels and
//! moments, fluctuation-dissipation-preserving Markovian embeddings of
//! orders 0–3, analytic and simulated velocity autocorrelations, and a
//! direct-convolution reference integrator for cost comparisons.
//!
//! The data-parallel paths (time grids, ensembles) run on rayon when the
//! default `parallel` feature is enabled and degrade to sequential loops
//! without it.

pub mod basis;
pub mod correlation;
pub mod error;
pub mod matops;
pub mod model;
pub mod par;
pub mod projection;
pub mod reduction;
pub mod series;
pub mod simulate;

pub use error::{ErrorCategory, GleError, Result};
