// SPDX-License-Identifier: MIT OR Apache-2.0

//! Activation patching and causal scrubbing for a small convolutional +
//! bidirectional-GRU sEEG-to-mel decoder.
//!
//! The crate bundles the decoder itself (forward, backprop, training), a
//! synthetic paired dataset with three speech modes, the intervention engine
//! (full, interpolated, regional and neuron-level patches), decoding metrics
//! and the aggregate analyses built on top of them.

pub mod analysis;
pub mod data;
pub mod error;
pub mod intervene;
pub mod metrics;
pub mod model;
pub mod plab;
pub mod tensor;

pub use error::{Error, Result};
