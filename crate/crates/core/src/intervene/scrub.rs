// SPDX-License-Identifier: MIT OR Apache-2.0

//! Causal scrubbing: keep a hypothesized region from the donor, resample
//! everything else from an unrelated example.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{hybrid, mean_score, Direction, RegionKind, RegionMask, Score, TraceBank};
use crate::error::{Error, Result};
use crate::model::{resume, ForwardTrace, Hooks, ModelWeights, TapSite};
use crate::tensor::{RngStream, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScrubVariant {
    KeepConv,
    KeepRnn,
    KeepCombo,
    RandConv,
    RandRnn,
    RandCombo,
    FullConv,
    FullRnn,
}

impl ScrubVariant {
    pub const ALL: [ScrubVariant; 8] = [
        ScrubVariant::KeepConv,
        ScrubVariant::KeepRnn,
        ScrubVariant::KeepCombo,
        ScrubVariant::RandConv,
        ScrubVariant::RandRnn,
        ScrubVariant::RandCombo,
        ScrubVariant::FullConv,
        ScrubVariant::FullRnn,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ScrubVariant::KeepConv => "KEEP-Conv",
            ScrubVariant::KeepRnn => "KEEP-RNN",
            ScrubVariant::KeepCombo => "KEEP-Combo",
            ScrubVariant::RandConv => "RAND-Conv",
            ScrubVariant::RandRnn => "RAND-RNN",
            ScrubVariant::RandCombo => "RAND-Combo",
            ScrubVariant::FullConv => "Full-Conv",
            ScrubVariant::FullRnn => "Full-RNN",
        }
    }

    fn touches_conv(self) -> bool {
        matches!(
            self,
            ScrubVariant::KeepConv | ScrubVariant::KeepCombo | ScrubVariant::RandConv | ScrubVariant::RandCombo
        )
    }

    fn touches_rnn(self) -> bool {
        matches!(
            self,
            ScrubVariant::KeepRnn | ScrubVariant::KeepCombo | ScrubVariant::RandRnn | ScrubVariant::RandCombo
        )
    }

    fn random(self) -> bool {
        matches!(
            self,
            ScrubVariant::RandConv | ScrubVariant::RandRnn | ScrubVariant::RandCombo
        )
    }
}

impl fmt::Display for ScrubVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ScrubVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScrubVariant::ALL
            .into_iter()
            .find(|v| v.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::arg(format!("unknown scrub variant {s:?}")))
    }
}

impl Serialize for ScrubVariant {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for ScrubVariant {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Half-open range expressed as fractions of an axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FracRange {
    pub lo: f64,
    pub hi: f64,
}

impl FracRange {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn whole() -> Self {
        Self::new(0.0, 1.0)
    }

    /// `[round(lo·n), round(hi·n))`.
    pub fn resolve(&self, n: usize) -> Result<(usize, usize)> {
        if !(0.0 <= self.lo && self.lo <= self.hi && self.hi <= 1.0) {
            return Err(Error::arg(format!(
                "fraction range [{}, {}) not within [0, 1]",
                self.lo, self.hi
            )));
        }
        let at = |f: f64| (f * n as f64).round() as usize;
        Ok((at(self.lo), at(self.hi)))
    }
}

/// Keep regions used by the KEEP-* variants and sized for RAND-*.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScrubConfig {
    /// Channel range of `conv_out`.
    pub keep_conv: FracRange,
    /// Time range of `rnn_out`.
    pub keep_rnn: FracRange,
}

impl Default for ScrubConfig {
    /// Channels `[32, 48)` of 64 and steps `[21, 84)` of 256.
    fn default() -> Self {
        Self {
            keep_conv: FracRange::new(32.0 / 64.0, 48.0 / 64.0),
            keep_rnn: FracRange::new(21.0 / 256.0, 84.0 / 256.0),
        }
    }
}

/// Region to copy from the donor for one axis: the keep range itself, or a
/// random contiguous block of the same length.
fn region(keep: FracRange, n: usize, random: bool, rng: &mut RngStream) -> Result<(usize, usize)> {
    let (lo, hi) = keep.resolve(n)?;
    if !random {
        return Ok((lo, hi));
    }
    let len = hi - lo;
    let start = rng.choice(n - len + 1)?;
    Ok((start, start + len))
}

/// Donor inside `[lo, hi)` of the given mask kind, filler elsewhere.
fn keep_in(filler: &Tensor, donor: &Tensor, site: TapSite, kind: RegionKind) -> Result<Tensor> {
    match kind {
        RegionKind::ChannelRange(lo, hi) | RegionKind::TimeRange(lo, hi) if lo == hi => {
            if filler.shape() != donor.shape() {
                return Err(Error::Pairing(format!("{site} filler and donor differ in shape")));
            }
            Ok(filler.clone())
        }
        kind => hybrid(filler, donor, &RegionMask::new(site, kind)),
    }
}

/// Runs one scrub variant.
///
/// KEEP-* copy the donor inside the keep region and take every other value
/// from `filler`; RAND-* do the same with a random contiguous block of equal
/// size drawn from `rng`; Full-* replace the site tensor with the donor's.
/// In the combined variants the `rnn_out` edit applies on top of the
/// activations produced downstream of the edited `conv_out`.
pub fn causal_scrub(
    w: &ModelWeights,
    recipient: &ForwardTrace,
    donor: &ForwardTrace,
    filler: &ForwardTrace,
    variant: ScrubVariant,
    cfg: &ScrubConfig,
    rng: &mut RngStream,
) -> Result<Tensor> {
    for t in [donor, filler] {
        if t.conv_out.shape() != recipient.conv_out.shape() || t.rnn_out.shape() != recipient.rnn_out.shape() {
            return Err(Error::Pairing("scrub traces differ in shape".into()));
        }
    }
    match variant {
        ScrubVariant::FullConv => return resume(w, TapSite::ConvOut, &donor.conv_out, &Hooks::new()),
        ScrubVariant::FullRnn => return resume(w, TapSite::RnnOut, &donor.rnn_out, &Hooks::new()),
        _ => {}
    }
    let random = variant.random();
    let conv_kind = if variant.touches_conv() {
        let (lo, hi) = region(cfg.keep_conv, donor.conv_out.dim(0), random, rng)?;
        Some(RegionKind::ChannelRange(lo, hi))
    } else {
        None
    };
    let rnn_kind = if variant.touches_rnn() {
        let (lo, hi) = region(cfg.keep_rnn, donor.rnn_out.dim(0), random, rng)?;
        Some(RegionKind::TimeRange(lo, hi))
    } else {
        None
    };
    match (conv_kind, rnn_kind) {
        (Some(ck), None) => {
            let h = keep_in(&filler.conv_out, &donor.conv_out, TapSite::ConvOut, ck)?;
            resume(w, TapSite::ConvOut, &h, &Hooks::new())
        }
        (None, Some(rk)) => {
            let h = keep_in(&filler.rnn_out, &donor.rnn_out, TapSite::RnnOut, rk)?;
            resume(w, TapSite::RnnOut, &h, &Hooks::new())
        }
        (Some(ck), Some(rk)) => {
            let h = keep_in(&filler.conv_out, &donor.conv_out, TapSite::ConvOut, ck)?;
            let donor_rnn = &donor.rnn_out;
            let hooks = Hooks::new().on(TapSite::RnnOut, move |a| {
                keep_in(a, donor_rnn, TapSite::RnnOut, rk.clone()).expect("shapes checked above")
            });
            resume(w, TapSite::ConvOut, &h, &hooks)
        }
        (None, None) => unreachable!("full variants handled above"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScrubResult {
    pub variant: ScrubVariant,
    pub direction: Direction,
    /// Mean PCC of the scrubbed output over keys.
    pub pcc: f64,
    pub mcd: f64,
    /// Change relative to the recipient's baseline.
    pub delta_pcc: f64,
    pub delta_mcd: f64,
    pub seed: u64,
}

/// Filler key for key `k`: a uniformly drawn different key.
fn filler_key(n: usize, k: usize, seed: u64) -> Result<usize> {
    if n < 2 {
        return Err(Error::Pairing(
            "scrubbing needs at least two keys to draw a filler".into(),
        ));
    }
    let j = RngStream::new(seed, 2 * k as u64).choice(n - 1)?;
    Ok(if j >= k { j + 1 } else { j })
}

/// Every variant in `variants` over all keys along `dir`. Fillers are
/// donor-mode trials of other keys; each key draws its filler and random
/// blocks from its own stream of `seed`.
pub fn scrub_dataset(
    w: &ModelWeights,
    bank: &TraceBank,
    dir: Direction,
    variants: &[ScrubVariant],
    cfg: &ScrubConfig,
    seed: u64,
) -> Result<Vec<ScrubResult>> {
    let n = bank.len();
    let fillers = (0..n).map(|k| filler_key(n, k, seed)).collect::<Result<Vec<_>>>()?;
    variants
        .iter()
        .map(|&variant| {
            let scores = (0..n)
                .into_par_iter()
                .map(|k| {
                    let mut rng = RngStream::new(seed, 2 * k as u64 + 1);
                    let mel = causal_scrub(
                        w,
                        bank.trace(k, dir.target),
                        bank.trace(k, dir.source),
                        bank.trace(fillers[k], dir.source),
                        variant,
                        cfg,
                        &mut rng,
                    )?;
                    let s = bank.score(k, &mel)?;
                    Ok((s, s.minus(bank.baseline(k, dir.target))))
                })
                .collect::<Result<Vec<(Score, Score)>>>()?;
            let (abs, delta): (Vec<Score>, Vec<Score>) = scores.into_iter().unzip();
            let (a, d) = (mean_score(&abs), mean_score(&delta));
            Ok(ScrubResult {
                variant,
                direction: dir,
                pcc: a.pcc,
                mcd: a.mcd,
                delta_pcc: d.pcc,
                delta_mcd: d.mcd,
                seed,
            })
        })
        .collect()
}
