//! File formats, run orchestration and reports around `mixnn-core`.

pub mod bench;
pub mod config;
pub mod error;
pub mod io;
pub mod report;
pub mod run;

pub use error::{CliError, Result};
