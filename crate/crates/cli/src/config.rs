// SPDX-License-Identifier: MIT OR Apache-2.0

//! Run configuration: a versioned TOML document overlaid on built-in
//! defaults, with every random seed derived from one global seed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use modepatch::data::GenConfig;
use modepatch::intervene::{Direction, FracRange, ScrubConfig, ScrubVariant};
use modepatch::model::{ModelConfig, TapSite, TrainOptions};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const CONFIG_VERSION: u32 = 1;

/// Names of the derived seeds, in the order they are recorded.
pub const SEED_NAMES: [&str; 5] = ["gen", "init", "train", "localize", "scrub"];

/// `u64` from the first 8 bytes (little-endian) of
/// `sha256(seed as little-endian u64 ‖ name)`.
pub fn sub_seed(seed: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    /// Global seed; every other seed is derived from it.
    pub seed: u64,
    /// Worker threads. Results do not depend on it.
    pub workers: usize,
    /// Output directory, relative to the working directory.
    pub out: PathBuf,
    /// `gen.seed` is derived and may not be set in the file.
    pub gen: GenConfig,
    pub model: ModelConfig,
    /// `train.seed` is derived and may not be set in the file.
    pub train: TrainOptions,
    pub experiments: Experiments,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiments {
    /// Ordered `source->target` pairs used by every experiment.
    pub directions: Vec<Direction>,
    /// Sites for full patching and interpolation.
    pub sites: Vec<TapSite>,
    pub alpha_grid: Vec<f64>,
    pub trace: TraceExperiment,
    pub localize: LocalizeExperiment,
    pub scrub: ScrubExperiment,
    pub neurons: NeuronExperiment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceExperiment {
    pub site: TapSite,
    pub window_frac: f64,
    /// Evenly spaced window positions; ignored when `stride_frac` is set.
    pub positions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride_frac: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizeExperiment {
    /// Channels per subgroup of the best conv group.
    pub subgroup_size: usize,
    /// Empty means every subgroup count.
    pub k_grid: Vec<usize>,
    pub n_random: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScrubExperiment {
    pub variants: Vec<ScrubVariant>,
    pub keep_conv: FracRange,
    pub keep_rnn: FracRange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeuronExperiment {
    /// Sites for single-neuron sweeps, saturation and winners.
    pub sites: Vec<TapSite>,
    /// Empty means every k from 1 to the site width.
    pub k_grid: Vec<usize>,
    pub folds: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let scrub = ScrubConfig::default();
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            workers: 1,
            out: PathBuf::from("runs/default"),
            gen: GenConfig::default(),
            model: ModelConfig::desk(),
            train: TrainOptions::default(),
            experiments: Experiments {
                directions: Direction::all_pairs(),
                sites: vec![TapSite::ConvOut, TapSite::RnnOut],
                alpha_grid: vec![0.0, 0.25, 0.5, 0.75, 1.0],
                trace: TraceExperiment {
                    site: TapSite::RnnOut,
                    window_frac: 0.25,
                    positions: 10,
                    stride_frac: None,
                },
                localize: LocalizeExperiment {
                    subgroup_size: 4,
                    k_grid: Vec::new(),
                    n_random: 10,
                },
                scrub: ScrubExperiment {
                    variants: ScrubVariant::ALL.to_vec(),
                    keep_conv: scrub.keep_conv,
                    keep_rnn: scrub.keep_rnn,
                },
                neurons: NeuronExperiment {
                    sites: vec![TapSite::RnnOut],
                    k_grid: Vec::new(),
                    folds: 4,
                },
            },
        }
    }
}

/// Recursively replaces values of `base` with those of `over`.
fn overlay(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => overlay(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl RunConfig {
    /// Parses a config document. Keys absent from it keep their defaults;
    /// unknown keys are rejected.
    pub fn from_toml(text: &str) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e| CliError::config(format!("{e}")))?;
        match user.get("version") {
            Some(toml::Value::Integer(v)) if *v == CONFIG_VERSION as i64 => {}
            Some(v) => {
                return Err(CliError::config(format!(
                    "unsupported config version {v} (expected {CONFIG_VERSION})"
                )))
            }
            None => return Err(CliError::config(format!("missing `version = {CONFIG_VERSION}`"))),
        }
        for section in ["gen", "train"] {
            if let Some(toml::Value::Table(t)) = user.get(section) {
                if t.contains_key("seed") {
                    return Err(CliError::config(format!(
                        "`{section}.seed` is derived from the global `seed` and cannot be set"
                    )));
                }
            }
        }
        let mut merged = toml::Table::try_from(RunConfig::default()).map_err(|e| CliError::Other(e.to_string()))?;
        overlay(&mut merged, user);
        let mut cfg: RunConfig = merged
            .try_into()
            .map_err(|e: toml::de::Error| CliError::config(e.to_string()))?;
        cfg.derive_seeds();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    /// Built-in defaults with derived seeds.
    pub fn resolved_default() -> Self {
        let mut c = Self::default();
        c.derive_seeds();
        c
    }

    /// Replaces the global seed and re-derives the others.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.derive_seeds();
    }

    fn derive_seeds(&mut self) {
        self.gen.seed = sub_seed(self.seed, "gen");
        self.train.seed = sub_seed(self.seed, "train");
    }

    pub fn seeds(&self) -> BTreeMap<String, u64> {
        SEED_NAMES
            .iter()
            .map(|&n| (n.to_owned(), sub_seed(self.seed, n)))
            .collect()
    }

    pub fn seed_for(&self, name: &str) -> u64 {
        sub_seed(self.seed, name)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("unsupported config version {}", self.version));
        }
        if self.workers == 0 {
            return bad("workers must be >= 1".into());
        }
        self.gen.validate().map_err(|e| CliError::config(format!("gen: {e}")))?;
        self.model
            .validate()
            .map_err(|e| CliError::config(format!("model: {e}")))?;
        if self.gen.c_in != self.model.in_channels {
            return bad(format!(
                "gen.c_in = {} but model.in_channels = {}",
                self.gen.c_in, self.model.in_channels
            ));
        }
        if self.gen.mel_bins != self.model.mel_bins {
            return bad(format!(
                "gen.mel_bins = {} but model.mel_bins = {}",
                self.gen.mel_bins, self.model.mel_bins
            ));
        }
        if (self.gen.frame_kernel, self.gen.frame_stride, self.gen.frame_padding)
            != (self.model.kernel, self.model.stride, self.model.padding)
        {
            return bad("gen frame geometry must match the model convolution".into());
        }
        if self.train.batch == 0 || !(self.train.lr.is_finite() && self.train.lr > 0.0) {
            return bad("train.batch must be >= 1 and train.lr positive".into());
        }
        let x = &self.experiments;
        if x.directions.is_empty() {
            return bad("experiments.directions is empty".into());
        }
        let frames = self.model.frames(self.gen.t_in).expect("checked by gen.validate");
        for &site in x.sites.iter().chain(&x.neurons.sites).chain([&x.trace.site]) {
            self.model
                .check_site(site)
                .map_err(|e| CliError::config(format!("experiments: {e}")))?;
        }
        if let Some(&a) = x.alpha_grid.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return bad(format!("alpha {a} outside [0, 1]"));
        }
        let t = &x.trace;
        let windows = match t.stride_frac {
            Some(s) => modepatch::intervene::sliding_windows_stride(frames, t.window_frac, s),
            None => modepatch::intervene::sliding_windows(frames, t.window_frac, t.positions),
        };
        windows.map_err(|e| CliError::config(format!("experiments.trace: {e}")))?;
        let l = &x.localize;
        let group = self.model.conv_channels / 4;
        if l.subgroup_size == 0 || !group.is_multiple_of(l.subgroup_size) {
            return bad(format!(
                "experiments.localize.subgroup_size {} must divide the conv group width {group}",
                l.subgroup_size
            ));
        }
        let n_sub = group / l.subgroup_size;
        if let Some(k) = l.k_grid.iter().find(|&&k| k == 0 || k > n_sub) {
            return bad(format!("experiments.localize.k_grid value {k} outside [1, {n_sub}]"));
        }
        for r in [x.scrub.keep_conv, x.scrub.keep_rnn] {
            r.resolve(1)
                .map_err(|e| CliError::config(format!("experiments.scrub: {e}")))?;
        }
        for &site in &x.neurons.sites {
            let width = self.model.site_width(site);
            if let Some(k) = x.neurons.k_grid.iter().find(|&&k| k == 0 || k > width) {
                return bad(format!(
                    "experiments.neurons.k_grid value {k} outside [1, {width}] for {site}"
                ));
            }
        }
        if x.neurons.folds == 0 || x.neurons.folds > self.gen.eval_keys.max(self.gen.n_keys) {
            return bad(format!("experiments.neurons.folds = {} invalid", x.neurons.folds));
        }
        Ok(())
    }

    /// Frames per trial for this config.
    pub fn frames(&self) -> usize {
        self.model.frames(self.gen.t_in).expect("validated config")
    }

    pub fn localize_k_grid(&self) -> Vec<usize> {
        let l = &self.experiments.localize;
        if l.k_grid.is_empty() {
            (1..=self.model.conv_channels / 4 / l.subgroup_size).collect()
        } else {
            l.k_grid.clone()
        }
    }

    pub fn neuron_k_grid(&self, site: TapSite) -> Vec<usize> {
        let k = &self.experiments.neurons.k_grid;
        if k.is_empty() {
            (1..=self.model.site_width(site)).collect()
        } else {
            k.clone()
        }
    }

    pub fn scrub_config(&self) -> ScrubConfig {
        ScrubConfig {
            keep_conv: self.experiments.scrub.keep_conv,
            keep_rnn: self.experiments.scrub.keep_rnn,
        }
    }

    /// Settings that determine results; excludes `workers` and `out`.
    pub fn science(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        let m = v.as_object_mut().expect("object");
        m.remove("workers");
        m.remove("out");
        v
    }

    /// sha256 of the canonical JSON of [`RunConfig::science`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(&self.science()).expect("json")))
    }
}
