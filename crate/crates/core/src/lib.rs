//! Elastic registration and Bayesian calibration for functional data.
//!
//! The crate separates curves into *amplitude* (what values a curve takes) and
//! *phase* (when it takes them) using square-root velocity transforms and
//! dynamic-programming warping, then calibrates computer-model parameters
//! against observed curves with a two-block Gaussian likelihood: one block for
//! aligned curves, one for the warping information encoded as shooting vectors
//! on the unit Hilbert sphere.
//!
//! Modules, bottom to top:
//!
//! - [`grid`]: curves sampled on strictly increasing grids, derivatives,
//!   resampling, square-root velocity transforms.
//! - [`align`]: pairwise warping by dynamic programming and ensemble
//!   decomposition into aligned curves + warps + shooting vectors.
//! - [`sphere`]: geometry of warping functions on the positive orthant of the
//!   unit sphere (exponential map, inverse, distances, shooting vectors).
//! - [`emulator`]: functional principal components + per-component Gaussian
//!   process regression, for cheap surrogate evaluation of a simulator.
//! - [`calibrate`]: the two-block likelihood, discrepancy bases, adaptive
//!   Metropolis-within-Gibbs sampling, and posterior prediction.
//! - [`synthetic`]: closed-form test-bed curve families and seeded designs.
//! - [`diagnostics`]: effective sample size, distribution tests, density
//!   summaries for reporting.
//! - [`io`]: CSV/JSON interchange for curves, decompositions, emulators and
//!   posterior output.

pub mod align;
pub mod calibrate;
pub mod diagnostics;
pub mod emulator;
mod error;
pub mod grid;
pub mod io;
pub mod seed;
pub mod sphere;
pub mod synthetic;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
