// SPDX-License-Identifier: MIT OR Apache-2.0

use rayon::prelude::*;

use super::{key_name, GenConfig, Mode, PairedEntry, PairedSet, PerMode, Trial};
use crate::error::Result;
use crate::tensor::{matmul, RngStream, Tensor};

/// Moving-average width applied after the walk.
const LATENT_SMOOTH: usize = 5;
/// Cosine basis size of the latent-to-mel map along frequency.
const MEL_BASIS: usize = 6;
/// Gain inside the softplus of the mel map.
const MEL_GAIN: f64 = 1.5;
/// Length of the envelope ramps, as a fraction of the trial.
const RAMP_FRAC: f64 = 0.03;

/// Components shared by every key, drawn from reserved streams.
struct Fixed {
    /// `C_in × latent`
    mix: Tensor,
    /// `mel_bins × latent`
    mel_map: Tensor,
    mel_base: Vec<f64>,
    /// Rank `latent/2` orthogonal projector, `latent × latent`.
    proj: Tensor,
}

fn stream(seed: u64, slot: u64) -> RngStream {
    RngStream::new(seed, u64::MAX - slot)
}

impl Fixed {
    fn draw(cfg: &GenConfig) -> Self {
        let l = cfg.latent_dim;
        let scale = 1.0 / (l as f64).sqrt();
        let mut rng = stream(cfg.seed, 0);
        let mix = Tensor::from_fn2(cfg.c_in, l, |_, _| rng.standard_normal() * scale);

        let mut rng = stream(cfg.seed, 1);
        let bins = cfg.mel_bins;
        let coef: Vec<f64> = (0..l * MEL_BASIS)
            .map(|i| rng.standard_normal() / (1 + i % MEL_BASIS) as f64)
            .collect();
        let basis = |j: usize, f: usize| (std::f64::consts::PI * j as f64 * (f as f64 + 0.5) / bins as f64).cos();
        let mut mel_map = Tensor::from_fn2(bins, l, |f, d| {
            (0..MEL_BASIS).map(|j| coef[d * MEL_BASIS + j] * basis(j, f)).sum()
        });
        // Unit average output variance for a standardized latent.
        let power = mel_map.sum_sq() / bins as f64;
        if power > 0.0 {
            let s = 1.0 / power.sqrt();
            mel_map.data_mut().iter_mut().for_each(|v| *v *= s);
        }
        let tilt = rng.uniform(0.3, 0.8);
        let mel_base = (0..bins).map(|f| tilt * basis(1, f)).collect();

        let mut rng = stream(cfg.seed, 2);
        let proj = projector(l, l / 2, &mut rng);
        Self {
            mix,
            mel_map,
            mel_base,
            proj,
        }
    }
}

/// `Q Qᵀ` for a random `n × rank` matrix `Q` with orthonormal columns.
fn projector(n: usize, rank: usize, rng: &mut RngStream) -> Tensor {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(rank);
    while cols.len() < rank {
        let mut v = rng.draw_normal(n);
        for c in &cols {
            let d: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|a| *a /= norm);
            cols.push(v);
        }
    }
    Tensor::from_fn2(n, n, |i, j| cols.iter().map(|c| c[i] * c[j]).sum())
}

/// Smooth, standardized latent path (`latent × T_in`) gated by the
/// utterance envelope.
fn latent_path(cfg: &GenConfig, rng: &mut RngStream) -> Tensor {
    let t_in = cfg.t_in;
    let rho = (-1.0 / cfg.latent_tau).exp();
    let innov = (1.0 - rho * rho).sqrt();
    let env = envelope(cfg);
    let half = LATENT_SMOOTH / 2;
    let mut out = Vec::with_capacity(cfg.latent_dim * t_in);
    for _ in 0..cfg.latent_dim {
        let mut x = rng.standard_normal();
        let walk: Vec<f64> = (0..t_in)
            .map(|_| {
                x = rho * x + innov * rng.standard_normal();
                x
            })
            .collect();
        let mut smooth: Vec<f64> = (0..t_in)
            .map(|t| {
                let lo = t.saturating_sub(half);
                let hi = (t + half + 1).min(t_in);
                walk[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
            })
            .collect();
        let mean = smooth.iter().sum::<f64>() / t_in as f64;
        let var = smooth.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t_in as f64;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        for (v, e) in smooth.iter_mut().zip(&env) {
            *v = (*v - mean) / sd * e;
        }
        out.extend(smooth);
    }
    Tensor::from_parts(vec![cfg.latent_dim, t_in], out)
}

/// 1 inside the utterance span, 0 outside, raised-cosine ramps at the edges.
fn envelope(cfg: &GenConfig) -> Vec<f64> {
    let t_in = cfg.t_in as f64;
    let start = cfg.utterance_span.0 * t_in;
    let end = cfg.utterance_span.1 * t_in;
    let ramp = (RAMP_FRAC * t_in).max(1.0).min((end - start) / 2.0);
    (0..cfg.t_in)
        .map(|t| {
            let t = t as f64 + 0.5;
            if t < start || t >= end {
                0.0
            } else {
                let edge = (t - start).min(end - t);
                if edge >= ramp {
                    1.0
                } else {
                    0.5 - 0.5 * (std::f64::consts::PI * edge / ramp).cos()
                }
            }
        })
        .collect()
}

/// Mel target (`T_c × mel_bins`): receptive-field average of the latent,
/// mapped through the fixed smooth map and a softplus, min-max normalized.
fn mel_target(cfg: &GenConfig, fixed: &Fixed, latent: &Tensor) -> Result<Tensor> {
    let frames = cfg.frames()?;
    let l = cfg.latent_dim;
    let mut pooled = vec![0.0; frames * l];
    for t in 0..frames {
        let lo = (t * cfg.frame_stride).saturating_sub(cfg.frame_padding);
        let hi = (t * cfg.frame_stride + cfg.frame_kernel)
            .saturating_sub(cfg.frame_padding)
            .min(cfg.t_in);
        if hi <= lo {
            continue;
        }
        for d in 0..l {
            let row = latent.row(d);
            pooled[t * l + d] = row[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
        }
    }
    let bins = cfg.mel_bins;
    let mut mel = vec![0.0; frames * bins];
    for t in 0..frames {
        let z = &pooled[t * l..(t + 1) * l];
        for f in 0..bins {
            let m = fixed.mel_map.row(f).iter().zip(z).map(|(a, b)| a * b).sum::<f64>() + fixed.mel_base[f];
            let x = MEL_GAIN * m;
            mel[t * bins + f] = x.max(0.0) + (-x.abs()).exp().ln_1p();
        }
    }
    let (lo, hi) = mel
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let range = hi - lo;
    for v in &mut mel {
        *v = if range > 0.0 { (*v - lo) / range } else { 0.0 };
    }
    Ok(Tensor::from_parts(vec![frames, bins], mel))
}

/// Observed trial: mixed latent plus white noise at the requested power ratio.
fn observe(fixed: &Fixed, latent: &Tensor, snr: f64, rng: &mut RngStream) -> Result<Tensor> {
    let mut s = matmul(&fixed.mix, latent)?;
    let power = s.sum_sq() / s.numel() as f64;
    let sigma = (power / snr).sqrt();
    for v in s.data_mut() {
        *v += sigma * rng.standard_normal();
    }
    Ok(s)
}

fn generate_key(cfg: &GenConfig, fixed: &Fixed, index: usize) -> Result<PairedEntry> {
    let key = key_name(index);
    let mut rng = RngStream::new(cfg.seed, index as u64);
    let latent = latent_path(cfg, &mut rng);
    let mel_target = mel_target(cfg, fixed, &latent)?;
    let d = cfg.mimed_distortion;
    let mimed_latent = if d > 0.0 {
        latent.lincomb(1.0 - d, &matmul(&fixed.proj, &latent)?, d)?
    } else {
        latent.clone()
    };
    let mut seeg = PerMode::from_fn(|_| None);
    for mode in Mode::ALL {
        let src = if mode == Mode::Mimed { &mimed_latent } else { &latent };
        seeg[mode] = Some(observe(fixed, src, cfg.snr[mode], &mut rng)?);
    }
    let trials = PerMode::from_fn(|mode| Trial {
        key: key.clone(),
        mode,
        seeg: seeg[mode].take().expect("filled above"),
    });
    Ok(PairedEntry {
        key,
        mel_target,
        trials,
    })
}

/// Noise-free observation of every mode for key `index`, i.e. the trials
/// [`generate`] would emit with infinite SNR.
pub fn clean_signal(cfg: &GenConfig, index: usize) -> Result<PerMode<Tensor>> {
    cfg.validate()?;
    let fixed = Fixed::draw(cfg);
    let latent = latent_path(cfg, &mut RngStream::new(cfg.seed, index as u64));
    let d = cfg.mimed_distortion;
    let mimed = latent.lincomb(1.0 - d, &matmul(&fixed.proj, &latent)?, d)?;
    Ok(PerMode {
        vocalized: matmul(&fixed.mix, &latent)?,
        mimed: matmul(&fixed.mix, &mimed)?,
        imagined: matmul(&fixed.mix, &latent)?,
    })
}

/// Builds the paired corpus. Each key draws from its own stream, so the
/// result does not depend on scheduling.
pub fn generate(cfg: &GenConfig) -> Result<PairedSet> {
    cfg.validate()?;
    let fixed = Fixed::draw(cfg);
    let entries = (0..cfg.total_keys())
        .into_par_iter()
        .map(|i| generate_key(cfg, &fixed, i))
        .collect::<Result<Vec<_>>>()?;
    PairedSet::new(entries, cfg.clone())
}
