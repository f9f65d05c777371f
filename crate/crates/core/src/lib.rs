//! Grid-based verification of exponential forgetting of the initial condition
//! for the filter of a hidden Markov model.
//!
//! The crate discretizes a one-dimensional HMM on a uniform grid, computes the
//! backward functions and forward smoothing kernels for a fixed observation
//! record, runs the coupled chain built from those kernels, and evaluates the
//! theoretical bounds (uniform coupling, strong small sets, uniform
//! accessibility, pairwise drift) against the total-variation distance between
//! filters started from two different priors.
//!
//! Module map:
//!
//! * [`model`]: model families, presets and path sampling.
//! * [`grid`]: grids, log-space probability vectors, row-stochastic kernels.
//! * [`smoothing`]: backward recursion, forward smoothing kernels, filters,
//!   Gaussian closed forms and the Kalman oracle.
//! * [`coupling`]: coupling constants, minorizing and residual kernels, the
//!   coupled chain and the Lindvall check.
//! * [`bounds`]: every theoretical bound.
//! * [`experiment`]: scenario runner and report writers used by the CLI.

pub mod bounds;
pub mod coupling;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod model;
pub mod rng;
pub mod smoothing;

pub use error::{Error, Result};
pub use grid::{build_grid, overlap_mass, tv_distance, Grid, KernelMatrix, ProbVector};
pub use model::{make_preset, ModelFamily, ModelSpec, PresetParams, PriorSpec};
pub use smoothing::SmoothingPipeline;
