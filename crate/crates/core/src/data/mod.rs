// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic paired tri-mode corpus.
//!
//! Every stimulus key owns one smooth latent content path. The mel target is
//! a fixed nonlinear map of that path; each speech mode observes it through
//! a shared channel-mixing matrix plus mode-specific noise, and the mimed
//! mode additionally loses part of the latent subspace.

mod generate;
mod io;

use std::fmt;
use std::ops::{Index, IndexMut};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TrainSample;
use crate::tensor::{conv1d_output_len, Tensor};

pub use generate::{clean_signal, generate};
pub use io::{load_dataset, save_dataset, DATASET_MANIFEST, DATASET_SCHEMA_VERSION};

/// Speech condition. Declaration order is the reporting order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Vocalized,
    Mimed,
    Imagined,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Vocalized, Mode::Mimed, Mode::Imagined];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Vocalized => "vocalized",
            Mode::Mimed => "mimed",
            Mode::Imagined => "imagined",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vocalized" | "v" => Ok(Mode::Vocalized),
            "mimed" | "m" => Ok(Mode::Mimed),
            "imagined" | "i" => Ok(Mode::Imagined),
            _ => Err(Error::arg(format!("unknown mode {s:?}"))),
        }
    }
}

/// One value per mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerMode<T> {
    pub vocalized: T,
    pub mimed: T,
    pub imagined: T,
}

impl<T> PerMode<T> {
    pub fn from_fn(mut f: impl FnMut(Mode) -> T) -> Self {
        Self {
            vocalized: f(Mode::Vocalized),
            mimed: f(Mode::Mimed),
            imagined: f(Mode::Imagined),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (Mode, &T)> {
        Mode::ALL.into_iter().map(move |m| (m, &self[m]))
    }
}

impl<T> Index<Mode> for PerMode<T> {
    type Output = T;

    fn index(&self, m: Mode) -> &T {
        match m {
            Mode::Vocalized => &self.vocalized,
            Mode::Mimed => &self.mimed,
            Mode::Imagined => &self.imagined,
        }
    }
}

impl<T> IndexMut<Mode> for PerMode<T> {
    fn index_mut(&mut self, m: Mode) -> &mut T {
        match m {
            Mode::Vocalized => &mut self.vocalized,
            Mode::Mimed => &mut self.mimed,
            Mode::Imagined => &mut self.imagined,
        }
    }
}

/// One recorded sEEG trial.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub key: String,
    pub mode: Mode,
    /// `C_in × T_in`
    pub seeg: Tensor,
}

/// A stimulus key with its shared target and one trial per mode.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedEntry {
    pub key: String,
    /// `T_c × mel_bins`, values in `[0, 1]`.
    pub mel_target: Tensor,
    pub trials: PerMode<Trial>,
}

impl PairedEntry {
    pub fn trial(&self, mode: Mode) -> &Trial {
        &self.trials[mode]
    }
}

/// Generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    /// Training keys.
    pub n_keys: usize,
    /// Held-out keys generated after the training keys, used for evaluation
    /// and interventions.
    #[serde(default = "default_eval_keys")]
    pub eval_keys: usize,
    /// sEEG channels.
    pub c_in: usize,
    /// Samples per trial.
    pub t_in: usize,
    pub latent_dim: usize,
    /// Signal-to-noise power ratio per mode.
    pub snr: PerMode<f64>,
    /// Blend weight of the rank-reducing projection applied to mimed trials.
    pub mimed_distortion: f64,
    pub seed: u64,
    #[serde(default = "default_mel_bins")]
    pub mel_bins: usize,
    /// Frame geometry of the mel target; must match the decoder convolution.
    #[serde(default = "default_frame_kernel")]
    pub frame_kernel: usize,
    #[serde(default = "default_frame_kernel")]
    pub frame_stride: usize,
    #[serde(default = "default_frame_padding")]
    pub frame_padding: usize,
    /// Fraction of the trial, `[start, end)`, in which the latent is active.
    /// Outside it the latent fades to zero.
    #[serde(default = "default_utterance_span")]
    pub utterance_span: (f64, f64),
    /// Correlation time of the latent content path, in samples.
    #[serde(default = "default_latent_tau")]
    pub latent_tau: f64,
}

fn default_eval_keys() -> usize {
    32
}

fn default_mel_bins() -> usize {
    80
}

fn default_frame_kernel() -> usize {
    4
}

fn default_frame_padding() -> usize {
    2
}

fn default_utterance_span() -> (f64, f64) {
    (0.05, 0.6)
}

fn default_latent_tau() -> f64 {
    8.0
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_keys: 64,
            eval_keys: default_eval_keys(),
            c_in: 16,
            t_in: 1024,
            latent_dim: 8,
            snr: PerMode {
                vocalized: 1.0,
                mimed: 4.0,
                imagined: 0.4,
            },
            mimed_distortion: 1.0,
            seed: 0,
            mel_bins: default_mel_bins(),
            frame_kernel: default_frame_kernel(),
            frame_stride: default_frame_kernel(),
            frame_padding: default_frame_padding(),
            utterance_span: default_utterance_span(),
            latent_tau: default_latent_tau(),
        }
    }
}

impl GenConfig {
    /// Larger preset with 200 training and 200 held-out keys.
    pub fn large() -> Self {
        Self {
            n_keys: 200,
            eval_keys: 200,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_keys == 0 {
            return Err(Error::arg("n_keys must be >= 1"));
        }
        if self.c_in == 0 || self.t_in == 0 || self.mel_bins == 0 {
            return Err(Error::arg("c_in, t_in and mel_bins must be >= 1"));
        }
        if self.latent_dim < 2 {
            return Err(Error::arg("latent_dim must be >= 2"));
        }
        for (m, &s) in self.snr.iter() {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::arg(format!(
                    "snr[{m}] must be a positive finite number, got {s}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.mimed_distortion) {
            return Err(Error::arg(format!(
                "mimed_distortion must lie in [0, 1], got {}",
                self.mimed_distortion
            )));
        }
        let (a, b) = self.utterance_span;
        if !(0.0 <= a && a < b && b <= 1.0) {
            return Err(Error::arg(format!(
                "utterance_span must satisfy 0 <= start < end <= 1, got ({a}, {b})"
            )));
        }
        if !(self.latent_tau.is_finite() && self.latent_tau > 0.0) {
            return Err(Error::arg(format!(
                "latent_tau must be positive, got {}",
                self.latent_tau
            )));
        }
        self.frames()?;
        Ok(())
    }

    /// Keys in a generated corpus.
    pub fn total_keys(&self) -> usize {
        self.n_keys + self.eval_keys
    }

    /// Mel frames per trial.
    pub fn frames(&self) -> Result<usize> {
        conv1d_output_len(self.t_in, self.frame_kernel, self.frame_stride, self.frame_padding).ok_or_else(|| {
            Error::arg(format!(
                "t_in={} too short for frame kernel {} (stride {}, padding {})",
                self.t_in, self.frame_kernel, self.frame_stride, self.frame_padding
            ))
        })
    }
}

/// The full corpus: entries in key order plus the settings that made them.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSet {
    entries: Vec<PairedEntry>,
    gen_config: GenConfig,
}

impl PairedSet {
    /// Assembles a set, checking pairing completeness and shapes.
    pub fn new(entries: Vec<PairedEntry>, gen_config: GenConfig) -> Result<Self> {
        let frames = gen_config.frames()?;
        let mut seen = std::collections::BTreeSet::new();
        for e in &entries {
            if !seen.insert(e.key.as_str()) {
                return Err(Error::Pairing(format!("duplicate key {}", e.key)));
            }
            e.mel_target
                .expect_shape(&format!("mel/{}", e.key), &[frames, gen_config.mel_bins])?;
            for (m, t) in e.trials.iter() {
                if t.mode != m || t.key != e.key {
                    return Err(Error::Pairing(format!(
                        "entry {} holds trial ({}, {}) in its {m} slot",
                        e.key, t.key, t.mode
                    )));
                }
                t.seeg
                    .expect_shape(&format!("seeg/{}/{m}", e.key), &[gen_config.c_in, gen_config.t_in])?;
                if !t.seeg.is_finite() {
                    return Err(Error::arg(format!("seeg/{}/{m} is not finite", e.key)));
                }
            }
        }
        Ok(Self { entries, gen_config })
    }

    pub fn entries(&self) -> &[PairedEntry] {
        &self.entries
    }

    pub fn gen_config(&self) -> &GenConfig {
        &self.gen_config
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.key.as_str())
    }

    /// Every `(trial, target)` pair, key-major then mode order.
    pub fn samples(&self) -> Vec<TrainSample<'_>> {
        self.entries
            .iter()
            .flat_map(|e| {
                Mode::ALL.into_iter().map(move |m| TrainSample {
                    input: &e.trials[m].seeg,
                    target: &e.mel_target,
                })
            })
            .collect()
    }

    /// Subset of keys, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<PairedSet> {
        let entries = indices
            .iter()
            .map(|&i| {
                self.entries
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::arg(format!("key index {i} out of range ({} keys)", self.len())))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut gen_config = self.gen_config.clone();
        gen_config.n_keys = entries.len();
        gen_config.eval_keys = 0;
        PairedSet::new(entries, gen_config)
    }

    /// The first `n_keys` keys.
    pub fn train_split(&self) -> Result<PairedSet> {
        let n = self.gen_config.n_keys.min(self.len());
        self.select(&(0..n).collect::<Vec<_>>())
    }

    /// Keys after the first `n_keys`; the whole set when it has no held-out
    /// keys.
    pub fn eval_split(&self) -> Result<PairedSet> {
        if self.gen_config.eval_keys == 0 {
            return Ok(self.clone());
        }
        self.select(&(self.gen_config.n_keys.min(self.len())..self.len()).collect::<Vec<_>>())
    }
}

/// Canonical key name for index `i`.
pub fn key_name(i: usize) -> String {
    format!("k{i:04}")
}
