// SPDX-License-Identifier: MIT OR Apache-2.0

//! Coarse channel/time localization, sliding-window tracing and ranked
//! channel-subgroup patching.

use serde::{Deserialize, Serialize};

use super::{mean_score, patch_region, Direction, RegionKind, RegionMask, Score, TraceBank};
use crate::error::{Error, Result};
use crate::metrics::mean_sd;
use crate::model::{ModelWeights, TapSite};
use crate::tensor::RngStream;

/// Four equal channel groups `g0..g3` over `width` features.
pub fn conv_groups(width: usize) -> Vec<(usize, usize)> {
    (0..4).map(|i| (i * width / 4, (i + 1) * width / 4)).collect()
}

/// Early / middle / late thirds of `frames` steps.
pub fn rnn_thirds(frames: usize) -> Vec<(usize, usize)> {
    let b = |j: usize| ((j * frames) as f64 / 3.0).round() as usize;
    (0..3).map(|j| (b(j), b(j + 1))).collect()
}

fn window_len(frames: usize, window_frac: f64) -> Result<usize> {
    if !(window_frac > 0.0 && window_frac <= 1.0) {
        return Err(Error::arg(format!(
            "window fraction must lie in (0, 1], got {window_frac}"
        )));
    }
    Ok(((window_frac * frames as f64).round() as usize).clamp(1, frames))
}

/// `positions` windows of length `round(window_frac·T)` with evenly spaced
/// starts `round(p·(T − W)/(positions − 1))`.
pub fn sliding_windows(frames: usize, window_frac: f64, positions: usize) -> Result<Vec<(usize, usize)>> {
    if positions < 2 {
        return Err(Error::arg(format!("need at least 2 window positions, got {positions}")));
    }
    let w = window_len(frames, window_frac)?;
    if w >= frames {
        return Err(Error::arg(format!(
            "window of {w} frames leaves no room to slide over {frames}"
        )));
    }
    let span = (frames - w) as f64;
    Ok((0..positions)
        .map(|p| {
            let s = (p as f64 * span / (positions - 1) as f64).round() as usize;
            (s, s + w)
        })
        .collect())
}

/// Windows of length `round(window_frac·T)` advanced by
/// `round(stride_frac·T)` until they would overrun the sequence.
pub fn sliding_windows_stride(frames: usize, window_frac: f64, stride_frac: f64) -> Result<Vec<(usize, usize)>> {
    let w = window_len(frames, window_frac)?;
    if !(stride_frac > 0.0 && stride_frac <= 1.0) {
        return Err(Error::arg(format!(
            "stride fraction must lie in (0, 1], got {stride_frac}"
        )));
    }
    let stride = ((stride_frac * frames as f64).round() as usize).max(1);
    Ok((0..)
        .map(|i| i * stride)
        .take_while(|s| s + w <= frames)
        .map(|s| (s, s + w))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowEffect {
    pub start: usize,
    pub end: usize,
    pub delta_pcc: f64,
    pub delta_mcd: f64,
}

/// Patches each time window at `site` along `dir` and reports mean score
/// changes over all keys.
pub fn sliding_window_trace(
    w: &ModelWeights,
    bank: &TraceBank,
    dir: Direction,
    site: TapSite,
    windows: &[(usize, usize)],
) -> Result<Vec<WindowEffect>> {
    windows
        .iter()
        .map(|&(start, end)| {
            let mask = RegionMask::new(site, RegionKind::TimeRange(start, end));
            let m = mean_score(&bank.deltas(dir, |_, r, d| patch_region(w, r, d, &mask))?);
            Ok(WindowEffect {
                start,
                end,
                delta_pcc: m.pcc,
                delta_mcd: m.mcd,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionEffect {
    pub label: String,
    pub site: TapSite,
    pub lo: usize,
    pub hi: usize,
    pub delta_pcc: f64,
    /// Across keys.
    pub delta_pcc_sd: f64,
    pub delta_mcd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseEffects {
    pub direction: Direction,
    /// Channel groups `g0..g3` at `conv_out`.
    pub conv: Vec<RegionEffect>,
    /// Early / middle / late thirds of `rnn_out`.
    pub rnn: Vec<RegionEffect>,
}

impl CoarseEffects {
    /// Conv group with the largest mean ΔPCC (lowest index on ties).
    pub fn best_conv_group(&self) -> &RegionEffect {
        best(&self.conv)
    }

    pub fn best_rnn_segment(&self) -> &RegionEffect {
        best(&self.rnn)
    }
}

fn best(effects: &[RegionEffect]) -> &RegionEffect {
    effects
        .iter()
        .reduce(|a, b| if b.delta_pcc > a.delta_pcc { b } else { a })
        .expect("at least one region")
}

fn region_effect(
    w: &ModelWeights,
    bank: &TraceBank,
    dir: Direction,
    label: String,
    mask: RegionMask,
) -> Result<RegionEffect> {
    let scores = bank.deltas(dir, |_, r, d| patch_region(w, r, d, &mask))?;
    let m = mean_score(&scores);
    let (_, sd) = mean_sd(&scores.iter().map(|s| s.pcc).collect::<Vec<_>>());
    let (lo, hi) = match mask.kind {
        RegionKind::ChannelRange(lo, hi) | RegionKind::TimeRange(lo, hi) => (lo, hi),
        _ => unreachable!("coarse regions are ranges"),
    };
    Ok(RegionEffect {
        label,
        site: mask.site,
        lo,
        hi,
        delta_pcc: m.pcc,
        delta_pcc_sd: sd,
        delta_mcd: m.mcd,
    })
}

/// Patches each conv channel group and each third of `rnn_out` on its own.
pub fn coarse_localize(w: &ModelWeights, bank: &TraceBank, dir: Direction) -> Result<CoarseEffects> {
    if bank.is_empty() {
        return Err(Error::arg("no keys to localize over"));
    }
    let cfg = w.config();
    let frames = bank.trace(0, dir.target).frames();
    let conv = conv_groups(cfg.conv_channels)
        .into_iter()
        .enumerate()
        .map(|(i, (lo, hi))| {
            let mask = RegionMask::new(TapSite::ConvOut, RegionKind::ChannelRange(lo, hi));
            region_effect(w, bank, dir, format!("g{i}"), mask)
        })
        .collect::<Result<Vec<_>>>()?;
    let rnn = rnn_thirds(frames)
        .into_iter()
        .zip(["early", "middle", "late"])
        .map(|((lo, hi), label)| {
            let mask = RegionMask::new(TapSite::RnnOut, RegionKind::TimeRange(lo, hi));
            region_effect(w, bank, dir, label.to_owned(), mask)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CoarseEffects {
        direction: dir,
        conv,
        rnn,
    })
}

/// Ranked top-k subgroup curve and matched random-k controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupCurves {
    pub direction: Direction,
    pub site: TapSite,
    pub base_group: (usize, usize),
    pub subgroup_size: usize,
    /// Mean individual ΔPCC of each subgroup, by subgroup index.
    pub subgroup_effects: Vec<f64>,
    /// Subgroup indices, most beneficial first.
    pub order: Vec<usize>,
    pub k_grid: Vec<usize>,
    /// Mean ΔPCC over keys of the top-k union, per k.
    pub ranked: Vec<f64>,
    /// Standard deviation across keys of the top-k union, per k.
    pub ranked_sd: Vec<f64>,
    /// Mean over draws of the per-draw mean ΔPCC, per k.
    pub random_mean: Vec<f64>,
    /// Standard deviation across draws, per k.
    pub random_sd: Vec<f64>,
    /// Per-draw mean ΔPCC, `[k index][draw]`.
    pub random_draws: Vec<Vec<f64>>,
}

impl SubgroupCurves {
    /// Fraction of k points where the ranked curve is at least the random mean.
    pub fn dominance(&self) -> f64 {
        let wins = self
            .ranked
            .iter()
            .zip(&self.random_mean)
            .filter(|(r, m)| r >= m)
            .count();
        wins as f64 / self.k_grid.len() as f64
    }
}

/// Descending by value, ascending index on ties.
pub(crate) fn rank_desc(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

/// Splits `base_group` into subgroups of `subgroup_size`, ranks them by
/// their individual mean ΔPCC and patches cumulative top-k unions. Each k
/// also gets `n_random` unions of the same channel count drawn from every
/// feature of the site.
#[allow(clippy::too_many_arguments)]
pub fn rank_subgroups_topk(
    w: &ModelWeights,
    bank: &TraceBank,
    dir: Direction,
    site: TapSite,
    base_group: (usize, usize),
    subgroup_size: usize,
    k_grid: &[usize],
    n_random: usize,
    seed: u64,
) -> Result<SubgroupCurves> {
    let width = w.config().site_width(site);
    let (lo, hi) = base_group;
    if lo >= hi || hi > width {
        return Err(Error::arg(format!(
            "base group [{lo}, {hi}) invalid for {width} features"
        )));
    }
    if subgroup_size == 0 || (hi - lo) % subgroup_size != 0 {
        return Err(Error::arg(format!(
            "subgroup size {subgroup_size} does not divide base group width {}",
            hi - lo
        )));
    }
    let n_sub = (hi - lo) / subgroup_size;
    if let Some(&k) = k_grid.iter().find(|&&k| k == 0 || k > n_sub) {
        return Err(Error::arg(format!("k = {k} outside [1, {n_sub}]")));
    }
    let mean_dpcc = |channels: Vec<usize>| -> Result<(f64, f64)> {
        let mask = RegionMask::new(site, RegionKind::ChannelSet(channels));
        let scores = bank.deltas(dir, |_, r, d| patch_region(w, r, d, &mask))?;
        Ok(mean_sd(&scores.iter().map(|s: &Score| s.pcc).collect::<Vec<_>>()))
    };
    let sub = |j: usize| lo + j * subgroup_size..lo + (j + 1) * subgroup_size;

    let subgroup_effects = (0..n_sub)
        .map(|j| Ok(mean_dpcc(sub(j).collect())?.0))
        .collect::<Result<Vec<_>>>()?;
    let order = rank_desc(&subgroup_effects);

    let mut ranked = Vec::with_capacity(k_grid.len());
    let mut ranked_sd = Vec::with_capacity(k_grid.len());
    let mut random_mean = Vec::with_capacity(k_grid.len());
    let mut random_sd = Vec::with_capacity(k_grid.len());
    let mut random_draws = Vec::with_capacity(k_grid.len());
    for &k in k_grid {
        let mut channels: Vec<usize> = order[..k].iter().flat_map(|&j| sub(j)).collect();
        channels.sort_unstable();
        let (m, sd) = mean_dpcc(channels)?;
        ranked.push(m);
        ranked_sd.push(sd);
        let draws = (0..n_random)
            .map(|r| {
                let mut rng = RngStream::new(seed, ((k as u64) << 32) | r as u64);
                let mut channels = rng.subset(width, k * subgroup_size)?;
                channels.sort_unstable();
                Ok(mean_dpcc(channels)?.0)
            })
            .collect::<Result<Vec<_>>>()?;
        let (m, sd) = mean_sd(&draws);
        random_mean.push(m);
        random_sd.push(sd);
        random_draws.push(draws);
    }
    Ok(SubgroupCurves {
        direction: dir,
        site,
        base_group,
        subgroup_size,
        subgroup_effects,
        order,
        k_grid: k_grid.to_vec(),
        ranked,
        ranked_sd,
        random_mean,
        random_sd,
        random_draws,
    })
}
