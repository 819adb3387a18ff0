//! Library side of the `mid` command-line tool: configuration, the
//! subcommands and report writers.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod report;

pub use config::Config;
pub use error::{CliError, CliResult};
