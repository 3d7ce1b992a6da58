//! Numerical laboratory for the stochastic heat equation
//! `∂ₜu = ½∂ₓ²u + σ(u)ξ` on a truncated line, driven by discretized
//! space-time white noise.
//!
//! The crate is organised bottom-up:
//!
//! - [`lattice`]: grids, fields, norms and initial data.
//! - [`noise`]: counter-based, reproducible white-noise slices.
//! - [`dynamics`]: heat semigroup, time steppers, the σ(u)/u-modulated
//!   linear equation and the partition-of-unity decomposition.
//! - [`observables`]: valleys, peak/mass ratios, martingale and
//!   quadratic-variation diagnostics, moments and `t^{1/3}` fits.
//! - [`fractal`]: Barlow–Taylor shells, box covers and dimension estimates.
//! - [`oracle`]: non-Monte-Carlo reference values.
//! - [`replicas`]: deterministic parallel execution of independent replicas.

pub mod dynamics;
pub mod error;
pub mod fractal;
pub mod lattice;
pub mod noise;
pub mod observables;
pub mod oracle;
pub mod replicas;

pub use error::{Error, Result};
