//! File formats, run configuration and the `hdpo` command-line driver.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod formats;

pub use cli::run;
pub use error::{CliError, CliResult};
