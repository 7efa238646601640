// SPDX-License-Identifier: MIT OR Apache-2.0

//! Spectrogram decoding metrics: PCC (concatenated and per sample), mel
//! cepstral distortion and DTW-aligned PCC.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{pearson, DctTable, Tensor};

/// Cepstral coefficients compared by [`mcd`], excluding `c0`.
pub const MCD_COEFFS: usize = 12;
/// Lower clamp applied before the logarithm in [`mcd`].
pub const LOG_FLOOR: f64 = 1e-5;

fn check_lists(preds: &[Tensor], targets: &[Tensor]) -> Result<()> {
    if preds.len() != targets.len() {
        return Err(Error::dim("prediction/target count", targets.len(), preds.len()));
    }
    for (i, (p, t)) in preds.iter().zip(targets).enumerate() {
        p.expect_shape(&format!("prediction {i}"), t.shape())?;
    }
    Ok(())
}

/// Pearson correlation over every sample's values, flattened and
/// concatenated.
pub fn pcc_concat(preds: &[Tensor], targets: &[Tensor]) -> Result<f64> {
    check_lists(preds, targets)?;
    let a: Vec<f64> = preds.iter().flat_map(|t| t.data().iter().copied()).collect();
    let b: Vec<f64> = targets.iter().flat_map(|t| t.data().iter().copied()).collect();
    pearson(&a, &b)
}

/// Per-sample correlations.
#[derive(Debug, Clone, PartialEq)]
pub struct PerSample {
    /// One entry per input pair; `None` where the pair was degenerate.
    pub values: Vec<Option<f64>>,
    pub mean: f64,
    /// Sample standard deviation (`n − 1`); 0 for a single sample.
    pub sd: f64,
    /// Samples that entered the mean.
    pub n: usize,
}

impl PerSample {
    pub fn excluded(&self) -> usize {
        self.values.len() - self.n
    }
}

/// Mean and sample standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

fn summarize(values: Vec<Option<f64>>, what: &str) -> Result<PerSample> {
    let ok: Vec<f64> = values.iter().flatten().copied().collect();
    if ok.is_empty() {
        return Err(Error::Degenerate(format!("every sample is degenerate for {what}")));
    }
    let skipped = values.len() - ok.len();
    if skipped > 0 {
        log::warn!("{what}: excluded {skipped} degenerate sample(s)");
    }
    let (mean, sd) = mean_sd(&ok);
    Ok(PerSample {
        n: ok.len(),
        values,
        mean,
        sd,
    })
}

/// PCC of each pair, then mean ± sd. Constant samples are excluded and
/// counted.
pub fn pcc_per_sample(preds: &[Tensor], targets: &[Tensor]) -> Result<PerSample> {
    check_lists(preds, targets)?;
    let values = preds
        .par_iter()
        .zip(targets)
        .map(|(p, t)| match pearson(p.data(), t.data()) {
            Ok(v) => Ok(Some(v)),
            Err(Error::Degenerate(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<_>>>()?;
    summarize(values, "per-sample PCC")
}

/// Reusable MCD evaluator for a fixed bin count.
#[derive(Debug, Clone)]
pub struct Mcd {
    table: DctTable,
}

impl Mcd {
    pub fn new(bins: usize) -> Result<Self> {
        if bins <= MCD_COEFFS {
            return Err(Error::arg(format!("MCD needs more than {MCD_COEFFS} bins, got {bins}")));
        }
        Ok(Self {
            table: DctTable::new(bins, MCD_COEFFS + 1),
        })
    }

    /// Frame-mean mel cepstral distortion between two `T × bins` tensors.
    pub fn eval(&self, pred: &Tensor, target: &Tensor) -> Result<f64> {
        let bins = self.table.len();
        if target.ndim() != 2 || target.dim(1) != bins {
            return Err(Error::dim("mcd bins", bins, *target.shape().last().unwrap_or(&0)));
        }
        pred.expect_shape("mcd prediction", target.shape())?;
        let frames = target.dim(0);
        if frames == 0 {
            return Err(Error::arg("mcd needs at least one frame"));
        }
        let k = MCD_COEFFS + 1;
        let (mut la, mut lb) = (vec![0.0; bins], vec![0.0; bins]);
        let (mut ca, mut cb) = (vec![0.0; k], vec![0.0; k]);
        let scale = 10.0 / std::f64::consts::LN_10;
        let mut total = 0.0;
        for t in 0..frames {
            for ((x, y), (a, b)) in la
                .iter_mut()
                .zip(lb.iter_mut())
                .zip(pred.row(t).iter().zip(target.row(t)))
            {
                *x = a.max(LOG_FLOOR).ln();
                *y = b.max(LOG_FLOOR).ln();
            }
            self.table.apply(&la, &mut ca);
            self.table.apply(&lb, &mut cb);
            let ss: f64 = ca[1..].iter().zip(&cb[1..]).map(|(a, b)| (a - b) * (a - b)).sum();
            total += scale * (2.0 * ss).sqrt();
        }
        Ok(total / frames as f64)
    }
}

/// Mel cepstral distortion: per frame `(10/ln10)·sqrt(2·Σ_{k=1..12}(c_k − ĉ_k)²)`
/// with `c = DCT-II(ln(max(x, 1e-5)))`, averaged over frames.
pub fn mcd(pred: &Tensor, target: &Tensor) -> Result<f64> {
    Mcd::new(*target.shape().last().unwrap_or(&0))?.eval(pred, target)
}

/// Minimum-cost warping path between the frames of `a` (`T1 × F`) and `b`
/// (`T2 × F`) under Euclidean frame distance with steps (1,0), (0,1),
/// (1,1). Ties during backtracking prefer the diagonal, then (1,0).
pub fn dtw_path(a: &Tensor, b: &Tensor) -> Result<Vec<(usize, usize)>> {
    if a.ndim() != 2 || b.ndim() != 2 {
        return Err(Error::arg("dtw inputs must be T × F"));
    }
    if a.dim(1) != b.dim(1) {
        return Err(Error::dim("dtw features", a.dim(1), b.dim(1)));
    }
    let (n, m) = (a.dim(0), b.dim(0));
    if n == 0 || m == 0 {
        return Err(Error::arg("dtw needs at least one frame on each side"));
    }
    let dist = |i: usize, j: usize| -> f64 {
        a.row(i)
            .iter()
            .zip(b.row(j))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let mut acc = vec![f64::INFINITY; n * m];
    for i in 0..n {
        for j in 0..m {
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 {
                    acc[(i - 1) * m + j - 1]
                } else {
                    f64::INFINITY
                };
                let up = if i > 0 { acc[(i - 1) * m + j] } else { f64::INFINITY };
                let left = if j > 0 { acc[i * m + j - 1] } else { f64::INFINITY };
                diag.min(up).min(left)
            };
            acc[i * m + j] = best + dist(i, j);
        }
    }
    let mut path = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while i > 0 || j > 0 {
        let diag = if i > 0 && j > 0 {
            acc[(i - 1) * m + j - 1]
        } else {
            f64::INFINITY
        };
        let up = if i > 0 { acc[(i - 1) * m + j] } else { f64::INFINITY };
        let left = if j > 0 { acc[i * m + j - 1] } else { f64::INFINITY };
        if diag <= up && diag <= left {
            i -= 1;
            j -= 1;
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
        path.push((i, j));
    }
    path.reverse();
    Ok(path)
}

/// Pearson correlation over DTW-aligned frame pairs, flattened.
pub fn dtw_pcc(pred: &Tensor, target: &Tensor) -> Result<f64> {
    let path = dtw_path(pred, target)?;
    let mut a = Vec::with_capacity(path.len() * pred.dim(1));
    let mut b = Vec::with_capacity(a.capacity());
    for &(i, j) in &path {
        a.extend_from_slice(pred.row(i));
        b.extend_from_slice(target.row(j));
    }
    pearson(&a, &b)
}

/// Baseline decoding summary for one set of predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricReport {
    #[serde(rename = "PCC (concat)")]
    pub pcc_concat: f64,
    #[serde(rename = "PCC (per-sample) mean")]
    pub pcc_per_sample_mean: f64,
    #[serde(rename = "PCC (per-sample) sd")]
    pub pcc_per_sample_sd: f64,
    #[serde(rename = "MCD mean")]
    pub mcd_mean: f64,
    #[serde(rename = "MCD sd")]
    pub mcd_sd: f64,
    #[serde(rename = "DTW-PCC (per-sample) mean")]
    pub dtw_pcc_mean: f64,
    pub n_samples: usize,
    pub log_floor: f64,
}

/// Computes every metric over matched prediction/target lists.
pub fn evaluate(preds: &[Tensor], targets: &[Tensor]) -> Result<MetricReport> {
    check_lists(preds, targets)?;
    if preds.is_empty() {
        return Err(Error::arg("evaluate needs at least one sample"));
    }
    let concat = pcc_concat(preds, targets)?;
    let per = pcc_per_sample(preds, targets)?;
    let mcd_eval = Mcd::new(*targets[0].shape().last().unwrap_or(&0))?;
    let mcds = preds
        .par_iter()
        .zip(targets)
        .map(|(p, t)| mcd_eval.eval(p, t))
        .collect::<Result<Vec<_>>>()?;
    let (mcd_mean, mcd_sd) = mean_sd(&mcds);
    let dtw = preds
        .par_iter()
        .zip(targets)
        .map(|(p, t)| match dtw_pcc(p, t) {
            Ok(v) => Ok(Some(v)),
            Err(Error::Degenerate(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<_>>>()?;
    let dtw = summarize(dtw, "DTW-PCC")?;
    Ok(MetricReport {
        pcc_concat: concat,
        pcc_per_sample_mean: per.mean,
        pcc_per_sample_sd: per.sd,
        mcd_mean,
        mcd_sd,
        dtw_pcc_mean: dtw.mean,
        n_samples: preds.len(),
        log_floor: LOG_FLOOR,
    })
}
