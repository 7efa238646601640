// SPDX-License-Identifier: MIT OR Apache-2.0

//! Conv1D encoder → stacked bidirectional GRU → linear mel head.
//!
//! The decoder exposes two primary tap sites, [`TapSite::ConvOut`]
//! (channel-major, `conv_channels × T_c`) and [`TapSite::RnnOut`] (time-major,
//! `T_c × 2·rnn_hidden`), plus the outputs of the intermediate recurrent
//! layers. Any tap can be rewritten through [`Hooks`] before the rest of the
//! network runs, which is all activation patching needs.
//!
//! Training uses frame-wise MSE, hand-derived backprop-through-time and Adam
//! (see [`train`]).

mod forward;
mod gradcheck;
mod gru;
mod train;
mod weights;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use forward::{forward, head, resume, ForwardTrace, Hooks};
pub use gradcheck::{grad_check, GradCheckReport, GradScope};
pub use train::{loss_and_grad, mse, train, LossPoint, TrainOptions, TrainOutcome, TrainSample};
pub use weights::{GruDirection, GruLayer, ModelWeights};

use crate::error::{Error, Result};
use crate::tensor::conv1d_output_len;

/// Architecture hyper-parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// sEEG channels fed to the convolution.
    pub in_channels: usize,
    pub conv_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// Hidden units per direction.
    pub rnn_hidden: usize,
    pub rnn_layers: usize,
    pub mel_bins: usize,
}

impl ModelConfig {
    /// Full-size architecture: 64 conv channels (k=4, s=4, p=2), three
    /// bidirectional GRU layers of 256 units per direction, 80 mel bins.
    pub fn full(in_channels: usize) -> Self {
        Self {
            in_channels,
            conv_channels: 64,
            kernel: 4,
            stride: 4,
            padding: 2,
            rnn_hidden: 256,
            rnn_layers: 3,
            mel_bins: 80,
        }
    }

    /// Desk-scale override: same geometry, 32 hidden units per direction so
    /// that `rnn_out` has 64 features, 16 input channels.
    pub fn desk() -> Self {
        Self {
            in_channels: 16,
            rnn_hidden: 32,
            ..Self::full(16)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("in_channels", self.in_channels),
            ("conv_channels", self.conv_channels),
            ("kernel", self.kernel),
            ("stride", self.stride),
            ("rnn_hidden", self.rnn_hidden),
            ("rnn_layers", self.rnn_layers),
            ("mel_bins", self.mel_bins),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::arg(format!("model.{name} must be >= 1")));
            }
        }
        Ok(())
    }

    /// Number of frames produced by the convolution for `t_in` samples.
    pub fn frames(&self, t_in: usize) -> Option<usize> {
        conv1d_output_len(t_in, self.kernel, self.stride, self.padding)
    }

    /// Width of `rnn_out` (both directions concatenated).
    pub fn rnn_width(&self) -> usize {
        2 * self.rnn_hidden
    }

    /// Input width of recurrent layer `layer`.
    pub fn gru_input(&self, layer: usize) -> usize {
        if layer == 0 {
            self.conv_channels
        } else {
            self.rnn_width()
        }
    }

    /// Number of neurons (`D_ℓ`) at a tap site.
    pub fn site_width(&self, site: TapSite) -> usize {
        match site {
            TapSite::ConvOut => self.conv_channels,
            TapSite::RnnOut | TapSite::RnnLayer(_) => self.rnn_width(),
        }
    }

    /// Shape of the tap tensor at `site` for `frames` time steps.
    pub fn site_shape(&self, site: TapSite, frames: usize) -> [usize; 2] {
        match site {
            TapSite::ConvOut => [self.conv_channels, frames],
            TapSite::RnnOut | TapSite::RnnLayer(_) => [frames, self.rnn_width()],
        }
    }

    /// Errors unless `site` exists in this architecture.
    pub fn check_site(&self, site: TapSite) -> Result<()> {
        match site {
            TapSite::RnnLayer(l) if l + 1 >= self.rnn_layers => Err(Error::arg(format!(
                "tap rnn_layer_{l} does not exist (intermediate layers are 0..{})",
                self.rnn_layers.saturating_sub(1)
            ))),
            _ => Ok(()),
        }
    }
}

/// Intervention site inside the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TapSite {
    /// Convolution output, `conv_channels × T_c`.
    ConvOut,
    /// Output of intermediate recurrent layer `l` (`l < rnn_layers - 1`),
    /// `T_c × 2·rnn_hidden`.
    RnnLayer(usize),
    /// Output of the final recurrent layer, `T_c × 2·rnn_hidden`.
    RnnOut,
}

impl TapSite {
    /// Axis holding neurons/channels (`D_ℓ`).
    pub fn feature_axis(self) -> usize {
        match self {
            TapSite::ConvOut => 0,
            _ => 1,
        }
    }

    /// Axis holding time (`T_ℓ`).
    pub fn time_axis(self) -> usize {
        1 - self.feature_axis()
    }

    /// Processing stage: 0 for the convolution, `l + 1` after GRU layer `l`.
    pub(crate) fn stage(self, layers: usize) -> usize {
        match self {
            TapSite::ConvOut => 0,
            TapSite::RnnLayer(l) => l + 1,
            TapSite::RnnOut => layers,
        }
    }
}

impl fmt::Display for TapSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TapSite::ConvOut => f.write_str("conv_out"),
            TapSite::RnnOut => f.write_str("rnn_out"),
            TapSite::RnnLayer(l) => write!(f, "rnn_layer_{l}"),
        }
    }
}

impl FromStr for TapSite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conv_out" | "conv" => Ok(TapSite::ConvOut),
            "rnn_out" | "rnn" => Ok(TapSite::RnnOut),
            _ => s
                .strip_prefix("rnn_layer_")
                .and_then(|l| l.parse().ok())
                .map(TapSite::RnnLayer)
                .ok_or_else(|| Error::arg(format!("unknown tap site {s:?}"))),
        }
    }
}

impl Serialize for TapSite {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TapSite {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
