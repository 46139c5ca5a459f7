//! Low-rank matrix recovery and dimensionality reduction on graphs.
//!
//! The core model: given a partially observed matrix whose rows and columns
//! each carry a similarity graph, recover the full matrix as
//! `X = Phi * P * C * Q' * Psi'` where `Phi` and `Psi` are truncated
//! eigenbases of the two graph Laplacians. Smoothness on both graphs is
//! what replaces the usual nuclear-norm prior.

pub mod error;
pub mod eval;
pub mod graph;
pub mod io;
pub mod report;
pub mod solver;
pub mod spectral;
pub mod synth;

pub use error::{Error, Result};
