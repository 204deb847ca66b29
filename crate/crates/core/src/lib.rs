//! Perturbation-induced bias in neural-module outputs.
//!
//! `certibias` measures how random input perturbations shift the outputs of a
//! module, bounds those shifts, fits correctors that remove the systematic
//! part, and issues robustness certificates before and after correction.
//!
//! The crate is organised by stage:
//!
//! - [`dataset`] and [`split`]: feature-dump format and split protocol
//! - [`biasstats`]: output shifts, bias/variance bounds, perturbation boxes
//! - [`compcert`]: component-wise robustness radii and confidence bounds
//! - [`debias`]: constant, ridge and PCA correctors
//! - [`margincert`]: per-example and population margin certificates
//! - [`metrics`]: balanced accuracy, damage/recovery, BCa intervals
//! - [`pipeline`]: fit, evaluate and certify in one call
//! - [`synth`]: synthetic modules, scenario fixtures, Monte Carlo oracles
//! - [`report`]: CSV tables and SVG figures
//! - [`cli`]: the `certibias` command line
//!
//! Each capability has a runnable program under `examples/`.

pub mod biasstats;
pub mod cli;
pub mod compcert;
pub mod csvio;
pub mod dataset;
pub mod debias;
pub mod error;
pub mod margincert;
pub mod metrics;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod split;
pub mod synth;
pub mod util;

pub use error::{Error, Result};
