// SPDX-License-Identifier: MIT OR Apache-2.0

//! Aggregate statistics over intervention sweeps: saturation curves, winner
//! consistency and coverage.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intervene::{topk_neuron_patch, Direction, RankedNeurons, TraceBank};
use crate::metrics::mean_sd;
use crate::model::{ModelWeights, TapSite};

/// Mean ΔPCC of top-k neuron patches as a function of k, relative to k = 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationCurve {
    pub site: TapSite,
    pub direction: Direction,
    pub k_grid: Vec<usize>,
    /// `mean ΔPCC(k) − mean ΔPCC(1)` over all keys.
    pub delta_pcc_rel_k1: Vec<f64>,
    /// Standard error of the relative value across key folds.
    pub sem: Vec<f64>,
    /// Unnormalized mean ΔPCC(k).
    pub delta_pcc: Vec<f64>,
    pub n_folds: usize,
}

impl SaturationCurve {
    /// Grid value of k with the largest relative ΔPCC (first on ties).
    pub fn argmax_k(&self) -> usize {
        let mut best = 0;
        for i in 1..self.k_grid.len() {
            if self.delta_pcc_rel_k1[i] > self.delta_pcc_rel_k1[best] {
                best = i;
            }
        }
        self.k_grid[best]
    }
}

/// Patches the top-k ranked neurons for each k in `k_grid` over every key.
/// Folds are `n_folds` disjoint key subsets (key index modulo `n_folds`).
pub fn saturation(
    w: &ModelWeights,
    bank: &TraceBank,
    dir: Direction,
    ranked: &RankedNeurons,
    k_grid: &[usize],
    n_folds: usize,
) -> Result<SaturationCurve> {
    let width = w.config().site_width(ranked.site);
    if ranked.len() != width {
        return Err(Error::arg(format!(
            "ranking covers {} neurons but {} has {width}",
            ranked.len(),
            ranked.site
        )));
    }
    if k_grid.is_empty() {
        return Err(Error::arg("empty k grid"));
    }
    if let Some(&k) = k_grid.iter().find(|&&k| k == 0 || k > width) {
        return Err(Error::arg(format!("k = {k} outside [1, {width}]")));
    }
    let n = bank.len();
    if n_folds == 0 || n_folds > n {
        return Err(Error::arg(format!("cannot form {n_folds} folds from {n} keys")));
    }
    let per_key = |k: usize| -> Result<Vec<f64>> {
        Ok(bank
            .deltas(dir, |_, r, d| topk_neuron_patch(w, r, d, ranked, k))?
            .into_iter()
            .map(|s| s.pcc)
            .collect())
    };
    let base = per_key(1)?;
    let base_mean = base.iter().sum::<f64>() / n as f64;
    let mut curve = SaturationCurve {
        site: ranked.site,
        direction: dir,
        k_grid: k_grid.to_vec(),
        delta_pcc_rel_k1: Vec::with_capacity(k_grid.len()),
        sem: Vec::with_capacity(k_grid.len()),
        delta_pcc: Vec::with_capacity(k_grid.len()),
        n_folds,
    };
    for &k in k_grid {
        let vals = if k == 1 { base.clone() } else { per_key(k)? };
        let mean = vals.iter().sum::<f64>() / n as f64;
        let folds: Vec<f64> = (0..n_folds)
            .map(|f| {
                let rel: Vec<f64> = (f..n).step_by(n_folds).map(|i| vals[i] - base[i]).collect();
                rel.iter().sum::<f64>() / rel.len() as f64
            })
            .collect();
        let (_, sd) = mean_sd(&folds);
        curve.delta_pcc.push(mean);
        curve.delta_pcc_rel_k1.push(mean - base_mean);
        curve.sem.push(sd / (n_folds as f64).sqrt());
    }
    Ok(curve)
}

/// Consistency of per-sentence winner neurons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinnerStats {
    pub n_sentences: usize,
    pub n_unique: usize,
    pub top1_coverage_pct: f64,
    pub top5_coverage_pct: f64,
    pub entropy_bits: f64,
}

/// Neurons ordered by how often they win (most frequent first, lower index
/// on ties), with their counts.
pub fn winner_frequencies(winners: &[usize]) -> Vec<(usize, usize)> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &w in winners {
        *counts.entry(w).or_default() += 1;
    }
    let mut freq: Vec<(usize, usize)> = counts.into_iter().collect();
    freq.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    freq
}

/// Shannon entropy in bits of the empirical distribution given by `counts`.
pub fn entropy_bits(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    let unique = counts.iter().filter(|&&c| c > 0).count();
    if unique <= 1 {
        return 0.0;
    }
    let max = (unique as f64).log2();
    let first = counts.iter().find(|&&c| c > 0).copied().unwrap_or(0);
    if counts.iter().all(|&c| c == 0 || c == first) {
        return max;
    }
    // H = log2 n − (1/n) Σ c·log2 c
    let n = n as f64;
    let s: f64 = counts
        .iter()
        .filter(|&&c| c > 1)
        .map(|&c| c as f64 * (c as f64).log2())
        .sum();
    (n.log2() - s / n).clamp(0.0, max)
}

pub fn winner_stats(winners: &[usize]) -> Result<WinnerStats> {
    if winners.is_empty() {
        return Err(Error::arg("empty winner table"));
    }
    let freq = winner_frequencies(winners);
    let n = winners.len();
    let covered = |k: usize| freq.iter().take(k).map(|&(_, c)| c).sum::<usize>() as f64 / n as f64 * 100.0;
    let counts: Vec<usize> = freq.iter().map(|&(_, c)| c).collect();
    Ok(WinnerStats {
        n_sentences: n,
        n_unique: freq.len(),
        top1_coverage_pct: covered(1),
        top5_coverage_pct: covered(5),
        entropy_bits: entropy_bits(&counts),
    })
}

/// For each k, the fraction of sentences whose winner is among the first k
/// neurons of `ranking`.
pub fn coverage_curve(winners: &[usize], ranking: &[usize], k_grid: &[usize]) -> Result<Vec<f64>> {
    if winners.is_empty() {
        return Err(Error::arg("empty winner table"));
    }
    let n = winners.len() as f64;
    Ok(k_grid
        .iter()
        .map(|&k| {
            let top = &ranking[..k.min(ranking.len())];
            winners.iter().filter(|w| top.contains(w)).count() as f64 / n
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_winner() {
        let s = winner_stats(&[7; 12]).unwrap();
        assert_eq!(s.n_unique, 1);
        assert_eq!(s.top1_coverage_pct, 100.0);
        assert_eq!(s.top5_coverage_pct, 100.0);
        assert_eq!(s.entropy_bits, 0.0);
    }

    #[test]
    fn uniform_winners_have_log2_entropy() {
        let w: Vec<usize> = (0..200).collect();
        let s = winner_stats(&w).unwrap();
        assert_eq!(s.n_unique, 200);
        assert_eq!(s.entropy_bits, 200f64.log2());
        assert!((s.entropy_bits - 7.644).abs() < 1e-3);
        assert!((s.top1_coverage_pct - 0.5).abs() < 1e-12);
        assert!((s.top5_coverage_pct - 2.5).abs() < 1e-12);
    }

    #[test]
    fn entropy_hand_value() {
        // p = (1/2, 1/4, 1/4) → 1.5 bits
        assert!((entropy_bits(&[2, 1, 1]) - 1.5).abs() < 1e-15);
        let direct = -[0.5f64, 0.25, 0.25].iter().map(|p| p * p.log2()).sum::<f64>();
        assert!((entropy_bits(&[2, 1, 1]) - direct).abs() < 1e-15);
    }

    #[test]
    fn frequency_ties_by_index() {
        assert_eq!(winner_frequencies(&[5, 3, 5, 3, 1]), [(3, 2), (5, 2), (1, 1)]);
    }

    #[test]
    fn coverage_examples() {
        let winners = [4, 4, 2, 9, 4, 2];
        let ranking: Vec<usize> = winner_frequencies(&winners).into_iter().map(|(n, _)| n).collect();
        let c = coverage_curve(&winners, &ranking, &[1, 2, 3, 10]).unwrap();
        assert_eq!(c, [0.5, 5.0 / 6.0, 1.0, 1.0]);
        let s = winner_stats(&winners).unwrap();
        assert!((c[0] - s.top1_coverage_pct / 100.0).abs() < 1e-15);
        assert!(winner_stats(&[]).is_err());
    }

    proptest! {
        #[test]
        fn winner_invariants(w in proptest::collection::vec(0usize..12, 1..60)) {
            let s = winner_stats(&w).unwrap();
            prop_assert!(s.n_unique >= 1 && s.n_unique <= s.n_sentences);
            prop_assert!(s.entropy_bits >= 0.0);
            prop_assert!(s.entropy_bits <= (s.n_unique as f64).log2() + 1e-12);
            prop_assert!(s.top5_coverage_pct >= s.top1_coverage_pct);
            prop_assert!(s.top1_coverage_pct > 0.0 && s.top5_coverage_pct <= 100.0);
            let ranking: Vec<usize> = winner_frequencies(&w).into_iter().map(|(n, _)| n).collect();
            let ks: Vec<usize> = (1..=s.n_unique).collect();
            let c = coverage_curve(&w, &ranking, &ks).unwrap();
            prop_assert!(c.windows(2).all(|p| p[0] <= p[1]));
            prop_assert_eq!(*c.last().unwrap(), 1.0);
        }
    }
}
