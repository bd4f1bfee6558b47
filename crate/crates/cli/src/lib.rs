//! File formats, parallel drivers and commands for the `rcql` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod model;
pub mod parallel;
pub mod records_csv;
pub mod report;
pub mod stard_csv;

pub use error::{CliError, Result};
