//! File formats, run configuration and command implementations for the
//! `social-pec` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod export;
pub mod io;

pub use error::{CliError, Result};
