// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every module of the crate.

use std::path::PathBuf;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong while building, running or probing a decoder.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A tensor had the wrong extent along some axis.
    #[error("dimension mismatch on {axis}: expected {expected}, got {got}")]
    Dimension {
        /// Human-readable axis name (e.g. `"conv.in_channels"`).
        axis: String,
        /// Expected extent.
        expected: usize,
        /// Observed extent.
        got: usize,
    },

    /// An argument was outside its documented domain.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Input to a statistic had zero variance (or was otherwise degenerate).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A hook edit broke the contract of the tap site it replaced.
    #[error("intervention error: {0}")]
    Intervention(String),

    /// Donor/recipient/filler trials could not be paired.
    #[error("pairing error: {0}")]
    Pairing(String),

    /// Training produced a non-finite loss.
    #[error("non-finite loss at epoch {epoch}, batch {batch} (parameter norm {param_norm:.6e})")]
    NonFinite {
        /// Zero-based epoch.
        epoch: usize,
        /// Zero-based batch within the epoch.
        batch: usize,
        /// L2 norm of all parameters at the time of failure.
        param_norm: f64,
    },

    /// A tensor container or manifest could not be decoded.
    #[error("format error in {path}: {msg}")]
    Format {
        /// File being decoded.
        path: PathBuf,
        /// What was wrong.
        msg: String,
    },

    /// Underlying I/O failure.
    #[error("i/o error on {path}: {source}")]
    Io {
        /// File or directory involved.
        path: PathBuf,
        /// Original error.
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(axis: impl Into<String>, expected: usize, got: usize) -> Self {
        Self::Dimension {
            axis: axis.into(),
            expected,
            got,
        }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Self::Argument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Self::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
