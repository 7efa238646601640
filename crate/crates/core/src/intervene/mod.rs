// SPDX-License-Identifier: MIT OR Apache-2.0

//! Cross-mode interventions on decoder activations.
//!
//! Every patch builds a hybrid tensor at one tap site (donor values inside a
//! region, recipient values elsewhere) and re-runs the decoder from that site
//! with [`resume`], which is bit-identical to a hooked forward pass of the
//! recipient input.

mod localize;
mod neuron;
mod scrub;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::{Mode, PairedSet, PerMode};
use crate::error::{Error, Result};
use crate::metrics::Mcd;
use crate::model::{forward, resume, ForwardTrace, Hooks, ModelWeights, TapSite};
use crate::tensor::{pearson, Tensor};

pub use localize::{
    coarse_localize, conv_groups, rank_subgroups_topk, rnn_thirds, sliding_window_trace, sliding_windows,
    sliding_windows_stride, CoarseEffects, RegionEffect, SubgroupCurves, WindowEffect,
};
pub use neuron::{rank_neurons, single_neuron_sweep, NeuronEffect, NeuronSweep, RankedNeurons};
pub use scrub::{causal_scrub, scrub_dataset, FracRange, ScrubConfig, ScrubResult, ScrubVariant};

/// Donor mode → recipient mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Direction {
    /// Mode whose activations are copied in.
    pub source: Mode,
    /// Mode whose input is decoded.
    pub target: Mode,
}

impl Direction {
    pub fn new(source: Mode, target: Mode) -> Self {
        Self { source, target }
    }

    /// Every ordered pair of distinct modes.
    pub fn all_pairs() -> Vec<Direction> {
        let mut out = Vec::with_capacity(6);
        for s in Mode::ALL {
            for t in Mode::ALL {
                if s != t {
                    out.push(Direction::new(s, t));
                }
            }
        }
        out
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.source, self.target)
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once("->")
            .ok_or_else(|| Error::arg(format!("direction {s:?} is not of the form source->target")))?;
        Ok(Direction::new(a.trim().parse()?, b.trim().parse()?))
    }
}

impl Serialize for Direction {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Direction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Which part of a site tensor a patch touches. Feature indices run over
/// conv channels at `conv_out` and over hidden features at recurrent sites.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    Full,
    ChannelRange(usize, usize),
    ChannelSet(Vec<usize>),
    TimeRange(usize, usize),
    NeuronSet(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionMask {
    pub site: TapSite,
    pub kind: RegionKind,
}

impl RegionMask {
    pub fn new(site: TapSite, kind: RegionKind) -> Self {
        Self { site, kind }
    }

    pub fn full(site: TapSite) -> Self {
        Self::new(site, RegionKind::Full)
    }

    /// Checks bounds against a site with `width` features and `frames` steps.
    pub fn validate(&self, width: usize, frames: usize) -> Result<()> {
        let range = |lo: usize, hi: usize, n: usize, axis: &str| {
            if lo >= hi {
                Err(Error::arg(format!("empty {axis} range [{lo}, {hi}) at {}", self.site)))
            } else if hi > n {
                Err(Error::arg(format!(
                    "{axis} range [{lo}, {hi}) exceeds {n} at {}",
                    self.site
                )))
            } else {
                Ok(())
            }
        };
        let set = |idx: &[usize]| {
            if idx.is_empty() {
                return Err(Error::arg(format!("empty index set at {}", self.site)));
            }
            if idx.windows(2).any(|p| p[0] >= p[1]) {
                return Err(Error::arg("index set must be strictly increasing"));
            }
            match idx.last() {
                Some(&i) if i >= width => Err(Error::arg(format!("index {i} out of range ({width} features)"))),
                _ => Ok(()),
            }
        };
        match &self.kind {
            RegionKind::Full => Ok(()),
            RegionKind::ChannelRange(lo, hi) => range(*lo, *hi, width, "channel"),
            RegionKind::TimeRange(lo, hi) => range(*lo, *hi, frames, "time"),
            RegionKind::ChannelSet(idx) | RegionKind::NeuronSet(idx) => set(idx),
        }
    }
}

fn copy_features(out: &mut Tensor, donor: &Tensor, site: TapSite, features: impl Iterator<Item = usize>) {
    if site.feature_axis() == 0 {
        for f in features {
            out.row_mut(f).copy_from_slice(donor.row(f));
        }
    } else {
        let width = out.dim(1);
        let (o, d) = (out.data_mut(), donor.data());
        for f in features {
            for t in 0..o.len() / width {
                o[t * width + f] = d[t * width + f];
            }
        }
    }
}

fn copy_times(out: &mut Tensor, donor: &Tensor, site: TapSite, lo: usize, hi: usize) {
    if site.time_axis() == 0 {
        for t in lo..hi {
            out.row_mut(t).copy_from_slice(donor.row(t));
        }
    } else {
        for r in 0..out.dim(0) {
            out.row_mut(r)[lo..hi].copy_from_slice(&donor.row(r)[lo..hi]);
        }
    }
}

/// Donor values inside `mask`, `base` values elsewhere.
pub fn hybrid(base: &Tensor, donor: &Tensor, mask: &RegionMask) -> Result<Tensor> {
    if base.shape() != donor.shape() {
        return Err(Error::Pairing(format!(
            "{} tensors differ in shape: {:?} vs {:?}",
            mask.site,
            base.shape(),
            donor.shape()
        )));
    }
    if base.ndim() != 2 {
        return Err(Error::dim(format!("{} rank", mask.site), 2, base.ndim()));
    }
    let site = mask.site;
    mask.validate(base.dim(site.feature_axis()), base.dim(site.time_axis()))?;
    let mut out = base.clone();
    match &mask.kind {
        RegionKind::Full => return Ok(donor.clone()),
        RegionKind::ChannelRange(lo, hi) => copy_features(&mut out, donor, site, *lo..*hi),
        RegionKind::ChannelSet(idx) | RegionKind::NeuronSet(idx) => {
            copy_features(&mut out, donor, site, idx.iter().copied())
        }
        RegionKind::TimeRange(lo, hi) => copy_times(&mut out, donor, site, *lo, *hi),
    }
    Ok(out)
}

/// Hook that applies `mask` with `donor` values during a forward pass.
pub fn patch_hooks<'a>(mask: &'a RegionMask, donor: &'a Tensor) -> Hooks<'a> {
    Hooks::new().on(mask.site, move |a| {
        hybrid(a, donor, mask).unwrap_or_else(|e| panic!("invalid patch at {}: {e}", mask.site))
    })
}

/// Decoder output after copying the donor's site tensor inside `mask` into
/// the recipient's pass.
pub fn patch_region(
    w: &ModelWeights,
    recipient: &ForwardTrace,
    donor: &ForwardTrace,
    mask: &RegionMask,
) -> Result<Tensor> {
    w.config().check_site(mask.site)?;
    let h = hybrid(recipient.site(mask.site)?, donor.site(mask.site)?, mask)?;
    resume(w, mask.site, &h, &Hooks::new())
}

/// Replaces the whole site tensor with the donor's.
pub fn patch_full(w: &ModelWeights, recipient: &ForwardTrace, donor: &ForwardTrace, site: TapSite) -> Result<Tensor> {
    patch_region(w, recipient, donor, &RegionMask::full(site))
}

/// `(1 − α)·z_a + α·z_b`; the endpoints return exact copies.
pub fn interpolate(z_a: &Tensor, z_b: &Tensor, alpha: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::arg(format!(
            "interpolation coefficient must lie in [0, 1], got {alpha}"
        )));
    }
    if z_a.shape() != z_b.shape() {
        return Err(Error::Pairing(format!(
            "interpolation endpoints differ in shape: {:?} vs {:?}",
            z_a.shape(),
            z_b.shape()
        )));
    }
    if alpha == 0.0 {
        Ok(z_a.clone())
    } else if alpha == 1.0 {
        Ok(z_b.clone())
    } else {
        z_a.lincomb(1.0 - alpha, z_b, alpha)
    }
}

/// Decoder output with the recipient's site tensor moved a fraction `alpha`
/// of the way towards the donor's.
pub fn patch_interpolate(
    w: &ModelWeights,
    recipient: &ForwardTrace,
    donor: &ForwardTrace,
    site: TapSite,
    alpha: f64,
) -> Result<Tensor> {
    w.config().check_site(site)?;
    let z = interpolate(recipient.site(site)?, donor.site(site)?, alpha)?;
    resume(w, site, &z, &Hooks::new())
}

/// Copies donor feature `i` across all time steps.
pub fn neuron_patch(
    w: &ModelWeights,
    recipient: &ForwardTrace,
    donor: &ForwardTrace,
    site: TapSite,
    i: usize,
) -> Result<Tensor> {
    let width = w.config().site_width(site);
    if i >= width {
        return Err(Error::arg(format!("neuron {i} out of range ({width} at {site})")));
    }
    patch_region(
        w,
        recipient,
        donor,
        &RegionMask::new(site, RegionKind::NeuronSet(vec![i])),
    )
}

/// Jointly patches the first `k` neurons of `ranked`.
pub fn topk_neuron_patch(
    w: &ModelWeights,
    recipient: &ForwardTrace,
    donor: &ForwardTrace,
    ranked: &RankedNeurons,
    k: usize,
) -> Result<Tensor> {
    patch_region(w, recipient, donor, &ranked.topk_mask(k)?)
}

/// PCC and MCD of one prediction against its target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub pcc: f64,
    pub mcd: f64,
}

impl Score {
    pub fn minus(self, base: Score) -> Score {
        Score {
            pcc: self.pcc - base.pcc,
            mcd: self.mcd - base.mcd,
        }
    }
}

/// Unpatched traces and baseline scores for every (key, mode).
#[derive(Debug, Clone)]
pub struct TraceBank {
    keys: Vec<String>,
    targets: Vec<Tensor>,
    traces: Vec<PerMode<ForwardTrace>>,
    base: Vec<PerMode<Score>>,
    mcd: Mcd,
}

impl TraceBank {
    pub fn build(w: &ModelWeights, set: &PairedSet) -> Result<Self> {
        let mcd = Mcd::new(w.config().mel_bins)?;
        let per_key = set
            .entries()
            .par_iter()
            .map(|e| {
                let mut traces = Vec::with_capacity(3);
                let mut scores = Vec::with_capacity(3);
                for m in Mode::ALL {
                    let tr = forward(w, &e.trial(m).seeg, &Hooks::new())?;
                    scores.push(score_with(&mcd, &tr.mel_pred, &e.mel_target)?);
                    traces.push(tr);
                }
                let mut t = traces.into_iter();
                let mut s = scores.into_iter();
                Ok((
                    PerMode::from_fn(|_| t.next().expect("three traces")),
                    PerMode::from_fn(|_| s.next().expect("three scores")),
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let (traces, base) = per_key.into_iter().unzip();
        Ok(Self {
            keys: set.keys().map(str::to_owned).collect(),
            targets: set.entries().iter().map(|e| e.mel_target.clone()).collect(),
            traces,
            base,
            mcd,
        })
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn target(&self, key: usize) -> &Tensor {
        &self.targets[key]
    }

    pub fn trace(&self, key: usize, mode: Mode) -> &ForwardTrace {
        &self.traces[key][mode]
    }

    pub fn baseline(&self, key: usize, mode: Mode) -> Score {
        self.base[key][mode]
    }

    /// Mean baseline score of one mode over all keys.
    pub fn baseline_mean(&self, mode: Mode) -> Score {
        let n = self.len() as f64;
        Score {
            pcc: self.base.iter().map(|b| b[mode].pcc).sum::<f64>() / n,
            mcd: self.base.iter().map(|b| b[mode].mcd).sum::<f64>() / n,
        }
    }

    pub fn score(&self, key: usize, mel: &Tensor) -> Result<Score> {
        score_with(&self.mcd, mel, &self.targets[key])
    }

    /// Score change of `mel` relative to the recipient's unpatched output.
    pub fn delta(&self, key: usize, recipient: Mode, mel: &Tensor) -> Result<Score> {
        Ok(self.score(key, mel)?.minus(self.baseline(key, recipient)))
    }

    /// Applies `patch(recipient, donor)` to every key along `dir` and returns
    /// per-key deltas in key order.
    pub fn deltas<F>(&self, dir: Direction, patch: F) -> Result<Vec<Score>>
    where
        F: Fn(usize, &ForwardTrace, &ForwardTrace) -> Result<Tensor> + Sync,
    {
        (0..self.len())
            .into_par_iter()
            .map(|k| {
                let mel = patch(k, self.trace(k, dir.target), self.trace(k, dir.source))?;
                self.delta(k, dir.target, &mel)
            })
            .collect()
    }
}

fn score_with(mcd: &Mcd, mel: &Tensor, target: &Tensor) -> Result<Score> {
    Ok(Score {
        pcc: pearson(mel.data(), target.data())?,
        mcd: mcd.eval(mel, target)?,
    })
}

/// Mean of each field over `scores`.
pub fn mean_score(scores: &[Score]) -> Score {
    let n = scores.len() as f64;
    Score {
        pcc: scores.iter().map(|s| s.pcc).sum::<f64>() / n,
        mcd: scores.iter().map(|s| s.mcd).sum::<f64>() / n,
    }
}
