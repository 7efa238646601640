// SPDX-License-Identifier: MIT OR Apache-2.0

//! Runner errors and their process exit codes.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Invalid or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    /// An input artifact that an earlier command should have produced.
    #[error("missing artifact {}: {hint}", path.display())]
    Missing { path: PathBuf, hint: String },

    /// A report written by an incompatible version.
    #[error("schema error in {}: {msg}", path.display())]
    Schema { path: PathBuf, msg: String },

    #[error(transparent)]
    Core(#[from] modepatch::Error),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }

    /// 2 config, 3 missing artifact, 4 numeric failure, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        use modepatch::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Missing { .. } => 3,
            CliError::Core(E::Argument(_)) => 2,
            CliError::Core(E::NonFinite { .. } | E::Degenerate(_)) => 4,
            _ => 1,
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Other(format!("csv: {e}"))
    }
}
