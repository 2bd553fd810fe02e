//! File formats, reports and the `fpstab` command line on top of
//! [`fpstab_core`].

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod gen;
pub mod lut;
pub mod report;
pub mod stream;

pub use crate::cli::Cli;
pub use crate::error::{CliError, Result};
