// SPDX-License-Identifier: MIT OR Apache-2.0

//! Config-driven runner for the modepatch experiments: dataset generation,
//! training, baselines, every intervention experiment and the consolidated
//! report, with a manifest of content hashes.

pub mod artifacts;
pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod records;
pub mod report;

pub use cli::{execute, Cli, Command};
pub use config::RunConfig;
pub use error::{CliError, Result};
