// SPDX-License-Identifier: MIT OR Apache-2.0

//! Single-neuron sweeps and neuron rankings.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::localize::rank_desc;
use super::{neuron_patch, Direction, RegionKind, RegionMask, TraceBank};
use crate::error::{Error, Result};
use crate::model::{ModelWeights, TapSite};

/// Mean effect of patching one neuron, with its per-sentence breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronEffect {
    pub site: TapSite,
    pub neuron: usize,
    /// Mean of `per_sentence`.
    pub delta_pcc: f64,
    pub per_sentence: BTreeMap<String, f64>,
}

/// Neurons ordered from most to least beneficial mean effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedNeurons {
    pub site: TapSite,
    pub order: Vec<usize>,
    /// `effects[j]` belongs to neuron `order[j]`.
    pub effects: Vec<NeuronEffect>,
}

impl RankedNeurons {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// First `k` neurons of the order.
    pub fn top(&self, k: usize) -> Result<&[usize]> {
        if k == 0 || k > self.len() {
            return Err(Error::arg(format!("k = {k} outside [1, {}]", self.len())));
        }
        Ok(&self.order[..k])
    }

    /// Mask covering the first `k` neurons.
    pub fn topk_mask(&self, k: usize) -> Result<RegionMask> {
        let mut idx = self.top(k)?.to_vec();
        idx.sort_unstable();
        Ok(RegionMask::new(self.site, RegionKind::NeuronSet(idx)))
    }
}

/// Orders `effects` by mean ΔPCC, descending; ties go to the lower index.
pub fn rank_neurons(effects: Vec<NeuronEffect>) -> Result<RankedNeurons> {
    let site = effects
        .first()
        .ok_or_else(|| Error::arg("no neuron effects to rank"))?
        .site;
    if effects.iter().any(|e| e.site != site) {
        return Err(Error::arg("neuron effects come from different sites"));
    }
    let mut by_neuron: Vec<Option<NeuronEffect>> = vec![None; effects.len()];
    for e in effects {
        let n = e.neuron;
        match by_neuron.get_mut(n) {
            Some(slot @ None) => *slot = Some(e),
            _ => return Err(Error::arg(format!("neuron {n} missing, repeated or out of range"))),
        }
    }
    let effects: Vec<NeuronEffect> = by_neuron.into_iter().map(|e| e.expect("all slots filled")).collect();
    let order = rank_desc(&effects.iter().map(|e| e.delta_pcc).collect::<Vec<_>>());
    let mut slots: Vec<Option<NeuronEffect>> = effects.into_iter().map(Some).collect();
    let effects = order.iter().map(|&i| slots[i].take().expect("permutation")).collect();
    Ok(RankedNeurons { site, order, effects })
}

/// Every single-neuron patch over every key for one direction and site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronSweep {
    pub site: TapSite,
    pub direction: Direction,
    pub keys: Vec<String>,
    /// `[neuron][key]`
    pub delta_pcc: Vec<Vec<f64>>,
    /// `[neuron][key]`
    pub delta_mcd: Vec<Vec<f64>>,
    /// Per key, the neuron with the largest ΔPCC (lowest index on ties).
    pub winners: Vec<usize>,
}

impl NeuronSweep {
    pub fn width(&self) -> usize {
        self.delta_pcc.len()
    }

    pub fn effects(&self) -> Vec<NeuronEffect> {
        self.delta_pcc
            .iter()
            .enumerate()
            .map(|(i, row)| NeuronEffect {
                site: self.site,
                neuron: i,
                delta_pcc: row.iter().sum::<f64>() / row.len() as f64,
                per_sentence: self.keys.iter().cloned().zip(row.iter().copied()).collect(),
            })
            .collect()
    }

    pub fn ranked(&self) -> Result<RankedNeurons> {
        rank_neurons(self.effects())
    }
}

/// Patches each neuron of `site` alone, for every key, along `dir`.
pub fn single_neuron_sweep(w: &ModelWeights, bank: &TraceBank, dir: Direction, site: TapSite) -> Result<NeuronSweep> {
    w.config().check_site(site)?;
    if bank.is_empty() {
        return Err(Error::arg("no keys to sweep"));
    }
    let width = w.config().site_width(site);
    let n = bank.len();
    let cells = (0..width * n)
        .into_par_iter()
        .map(|c| {
            let (i, k) = (c / n, c % n);
            let mel = neuron_patch(w, bank.trace(k, dir.target), bank.trace(k, dir.source), site, i)?;
            bank.delta(k, dir.target, &mel)
        })
        .collect::<Result<Vec<_>>>()?;
    let delta_pcc: Vec<Vec<f64>> = cells.chunks(n).map(|r| r.iter().map(|s| s.pcc).collect()).collect();
    let delta_mcd: Vec<Vec<f64>> = cells.chunks(n).map(|r| r.iter().map(|s| s.mcd).collect()).collect();
    let winners = (0..n)
        .map(|k| {
            let mut best = 0;
            for i in 1..width {
                if delta_pcc[i][k] > delta_pcc[best][k] {
                    best = i;
                }
            }
            best
        })
        .collect();
    Ok(NeuronSweep {
        site,
        direction: dir,
        keys: bank.keys().to_vec(),
        delta_pcc,
        delta_mcd,
        winners,
    })
}
