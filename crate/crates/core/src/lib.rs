//! Two-stage linear Q-learning for dynamic treatment regimes whose tailoring
//! covariates are observed only through replicated, error-contaminated
//! surrogates.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is a pure
//! function of its inputs and a seed: file formats, the command line and
//! thread pools live in the companion `rcql` crate.
//!
//! Module map:
//!
//! - [`data`]: trajectories, replicate storage, histories and design rows.
//! - [`linmodel`]: Householder least squares.
//! - [`calibration`]: replicate-data regression calibration.
//! - [`qlearning`]: backward induction and the induced policy.
//! - [`inference`]: nonparametric bootstrap and coverage.
//! - [`simlab`]: data-generating processes and Monte-Carlo metrics.
//! - [`stard`]: the sequenced-treatment depression study pipeline.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod calibration;
pub mod data;
mod error;
pub mod inference;
pub mod linalg;
pub mod linmodel;
pub mod qlearning;
pub mod rng;
pub mod simlab;
pub mod stard;

pub use error::{Error, Result};
