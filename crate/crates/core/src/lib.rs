//! Sparse Hanson–Wright tail bounds and their empirical verification.
//!
//! The crate covers sampling of sparse α-sub-exponential vectors, the matrix
//! norms and sparse functionals entering the bounds, bound evaluators, a Monte
//! Carlo engine for quadratic forms, and three applications: IPW covariance
//! estimation with missing entries, sparsified-sketch low-rank approximation
//! and norm concentration of sparse vectors.

pub mod bounds;
pub mod covest;
pub mod error;
pub mod hash;
pub mod matrix_io;
pub mod matrix_norms;
pub mod quadform_mc;
pub mod rng;
pub mod rv_models;
pub mod sketchlr;
pub mod stats;

pub use error::{Error, Result};
