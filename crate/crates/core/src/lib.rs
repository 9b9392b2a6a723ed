//! Iterative CG-SENSE reconstruction for non-Cartesian multi-coil MRI.
//!
//! The pipeline follows the classic recipe: optional noise pre-whitening,
//! coil sensitivity estimation, density compensation, a Kaiser-Bessel
//! gridding NUFFT, and conjugate gradient on the normal equations
//! `(EᴴE + λI) v = Eᴴm`, followed by a k-space support filter.
//!
//! Alongside the solver the crate ships a simulator (phantom, coil maps,
//! trajectories, direct-DFT oracle) and the image comparison metrics used
//! to check reconstructions against each other.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coils;
pub mod config;
pub mod container;
pub mod data;
pub mod dcf;
pub mod error;
pub mod export;
pub mod filter;
pub mod metrics;
pub mod nufft;
pub mod sense;
pub mod sim;

pub use error::{Error, Result};

/// Complex sample type used throughout the crate.
pub type C64 = num_complex::Complex64;
