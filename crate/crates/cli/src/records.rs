// SPDX-License-Identifier: MIT OR Apache-2.0

//! Typed payloads of the JSON reports and rows of the CSV outputs.

use std::collections::BTreeMap;

use modepatch::analysis::{SaturationCurve, WinnerStats};
use modepatch::intervene::{CoarseEffects, Direction, NeuronSweep, ScrubResult, SubgroupCurves};
use modepatch::metrics::MetricReport;
use modepatch::model::TapSite;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: usize,
    pub steps: usize,
    pub train_keys: usize,
    pub init_seed: u64,
    pub shuffle_seed: u64,
    pub first_loss: Option<f64>,
    pub final_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
}

/// Per-mode decoding quality on the held-out keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub keys: Vec<String>,
    pub modes: BTreeMap<String, MetricReport>,
}

/// Mean over keys of one full patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchRow {
    pub direction: Direction,
    pub site: TapSite,
    pub baseline_pcc: f64,
    pub baseline_mcd: f64,
    pub pcc: f64,
    pub mcd: f64,
    pub delta_pcc: f64,
    pub delta_mcd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchKeyRow {
    pub direction: Direction,
    pub site: TapSite,
    pub key: String,
    pub delta_pcc: f64,
    pub delta_mcd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpRow {
    pub direction: Direction,
    pub site: TapSite,
    pub alpha: f64,
    pub pcc: f64,
    pub delta_pcc: f64,
    pub delta_mcd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizeReport {
    pub coarse: Vec<CoarseEffects>,
    pub topk: Vec<SubgroupCurves>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRow {
    pub direction: Direction,
    pub site: TapSite,
    pub region: String,
    pub lo: usize,
    pub hi: usize,
    pub delta_pcc: f64,
    pub delta_pcc_sd: f64,
    pub delta_mcd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopkRow {
    pub direction: Direction,
    pub base_lo: usize,
    pub base_hi: usize,
    pub k: usize,
    pub channels: usize,
    pub ranked: f64,
    pub ranked_sd: f64,
    pub random_mean: f64,
    pub random_sd: f64,
}

/// One sliding window, averaged over keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub window: (usize, usize),
    pub direction: Direction,
    pub site: TapSite,
    pub pcc: f64,
    pub mcd: f64,
    pub delta_pcc: f64,
    pub delta_mcd: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub direction: Direction,
    pub site: TapSite,
    pub start: usize,
    pub end: usize,
    pub delta_pcc: f64,
    pub delta_mcd: f64,
}

pub type ScrubReport = Vec<ScrubResult>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScrubRow {
    pub direction: Direction,
    pub variant: String,
    pub pcc: f64,
    pub mcd: f64,
    pub delta_pcc: f64,
    pub delta_mcd: f64,
    pub seed: u64,
}

pub type SweepReport = Vec<NeuronSweep>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub direction: Direction,
    pub layer: TapSite,
    pub neuron: usize,
    pub key: String,
    pub delta_pcc: f64,
    pub delta_mcd: f64,
}

pub type SaturationReport = Vec<SaturationCurve>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationRow {
    pub direction: Direction,
    pub site: TapSite,
    pub k: usize,
    pub delta_pcc_rel_k1: f64,
    pub sem: f64,
    pub delta_pcc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinnerRecord {
    pub direction: Direction,
    pub site: TapSite,
    pub stats: WinnerStats,
    /// `(neuron, count)`, most frequent first.
    pub frequencies: Vec<(usize, usize)>,
    pub coverage_k: Vec<usize>,
    pub coverage: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub direction: Direction,
    pub site: TapSite,
    pub k: usize,
    pub coverage: f64,
}
