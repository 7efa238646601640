// SPDX-License-Identifier: MIT OR Apache-2.0

//! MSE training with hand-derived backprop-through-time and Adam.
//!
//! For a prediction `ŷ` (`T × M`) and target `y` the loss is
//! `L = (1 / TM) Σ (ŷ − y)²`. Gradients of a batch are the mean of the
//! per-example gradients, reduced in example order so that the result does
//! not depend on how many worker threads computed them.
//!
//! The update for every parameter `θ` with gradient `g` at step `s` (1-based):
//!
//! ```text
//! m ← β1·m + (1 − β1)·g
//! v ← β2·v + (1 − β2)·g²
//! θ ← θ − lr · (m / (1 − β1^s)) / (sqrt(v / (1 − β2^s)) + ε)
//! ```
//!
//! If `clip_norm` is set, the batch gradient is rescaled to that global L2
//! norm before the update whenever it is larger.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gru::{layer_backward, layer_forward, LayerCache};
use super::{head, ModelWeights};
use crate::error::{Error, Result};
use crate::tensor::{axpy, conv1d, RngStream, Tensor};

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOptions {
    pub epochs: usize,
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    pub batch: usize,
    /// Seeds the per-epoch shuffle.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub clip_norm: Option<f64>,
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.99
}

fn default_eps() -> f64 {
    1e-8
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr: 3e-3,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            batch: 8,
            seed: 0,
            clip_norm: Some(1.0),
        }
    }
}

/// One `(input, target)` pair.
#[derive(Debug, Clone, Copy)]
pub struct TrainSample<'a> {
    /// `in_channels × T`
    pub input: &'a Tensor,
    /// `T_c × mel_bins`
    pub target: &'a Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: ModelWeights,
    /// Mean batch loss before each update.
    pub losses: Vec<LossPoint>,
}

/// Frame-wise mean squared error.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<f64> {
    target.expect_shape("mse target", pred.shape())?;
    let n = pred.numel() as f64;
    Ok(pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, y)| (p - y) * (p - y))
        .sum::<f64>()
        / n)
}

fn check_pair(w: &ModelWeights, x: &Tensor, y: &Tensor) -> Result<()> {
    let cfg = w.config();
    if x.ndim() != 2 || x.dim(0) != cfg.in_channels {
        return Err(Error::dim("input channels", cfg.in_channels, x.shape()[0]));
    }
    let frames = cfg
        .frames(x.dim(1))
        .ok_or_else(|| Error::arg(format!("input length {} too short for the convolution", x.dim(1))))?;
    y.expect_shape("mel target", &[frames, cfg.mel_bins])
}

/// MSE loss and its gradient with respect to every parameter.
pub fn loss_and_grad(w: &ModelWeights, x: &Tensor, y: &Tensor) -> Result<(f64, ModelWeights)> {
    check_pair(w, x, y)?;
    let cfg = w.config();

    let conv = conv1d(x, &w.conv_w, &w.conv_b, cfg.stride, cfg.padding)?;
    let mut caches = vec![LayerCache::default(); w.layers.len()];
    let mut seq = conv.transpose();
    for (layer, cache) in w.layers.iter().zip(caches.iter_mut()) {
        seq = layer_forward(layer, &seq, Some(cache));
    }
    let rnn_out = seq;
    let mel = head(w, &rnn_out)?;
    let loss = mse(&mel, y)?;

    let mut grad = ModelWeights::zeros(cfg)?;
    let (frames, bins) = (mel.dim(0), mel.dim(1));
    let scale = 2.0 / (frames * bins) as f64;
    let d_mel: Vec<f64> = mel.data().iter().zip(y.data()).map(|(p, t)| scale * (p - t)).collect();

    // Head.
    let width = rnn_out.dim(1);
    let mut d_rnn = vec![0.0; frames * width];
    for t in 0..frames {
        let h = rnn_out.row(t);
        let dr = &mut d_rnn[t * width..(t + 1) * width];
        for m in 0..bins {
            let g = d_mel[t * bins + m];
            axpy(g, h, grad.head_w.row_mut(m));
            grad.head_b.data_mut()[m] += g;
            axpy(g, w.head_w.row(m), dr);
        }
    }

    // Recurrent stack, last layer first.
    let mut d_seq = Tensor::from_parts(vec![frames, width], d_rnn);
    for l in (0..w.layers.len()).rev() {
        d_seq = layer_backward(&w.layers[l], &caches[l], &d_seq, &mut grad.layers[l]);
    }

    // Convolution; `d_seq` is `T_c × conv_channels`.
    let (c_in, len) = (x.dim(0), x.dim(1));
    let kernel = cfg.kernel;
    for c in 0..cfg.conv_channels {
        for t in 0..frames {
            let g = d_seq.at(t, c);
            grad.conv_b.data_mut()[c] += g;
            let start = (t * cfg.stride) as isize - cfg.padding as isize;
            for ci in 0..c_in {
                let xs = &x.data()[ci * len..(ci + 1) * len];
                let base = (c * c_in + ci) * kernel;
                for k in 0..kernel {
                    let pos = start + k as isize;
                    if pos >= 0 && (pos as usize) < len {
                        grad.conv_w.data_mut()[base + k] += g * xs[pos as usize];
                    }
                }
            }
        }
    }
    Ok((loss, grad))
}

/// Trains on `samples` (all modes jointly) and returns the updated weights
/// with the per-step loss curve. Deterministic given `opts.seed`.
pub fn train(w: &ModelWeights, samples: &[TrainSample<'_>], opts: &TrainOptions) -> Result<TrainOutcome> {
    if opts.batch == 0 {
        return Err(Error::arg("batch size must be >= 1"));
    }
    if !(0.0..1.0).contains(&opts.beta1) || !(0.0..1.0).contains(&opts.beta2) {
        return Err(Error::arg("Adam betas must lie in [0, 1)"));
    }
    if !opts.lr.is_finite() || opts.lr < 0.0 {
        return Err(Error::arg("learning rate must be finite and >= 0"));
    }
    for s in samples {
        check_pair(w, s.input, s.target)?;
    }
    let mut weights = w.clone();
    let mut m = ModelWeights::zeros(w.config())?;
    let mut v = ModelWeights::zeros(w.config())?;
    let mut losses = Vec::new();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut step = 0usize;

    for epoch in 0..opts.epochs {
        order.sort_unstable();
        RngStream::new(opts.seed, epoch as u64).shuffle(&mut order);
        for (batch_idx, chunk) in order.chunks(opts.batch).enumerate() {
            let results: Vec<Result<(f64, ModelWeights)>> = chunk
                .par_iter()
                .map(|&i| loss_and_grad(&weights, samples[i].input, samples[i].target))
                .collect();
            let mut grad = ModelWeights::zeros(w.config())?;
            let mut loss = 0.0;
            for r in results {
                let (l, g) = r?;
                loss += l;
                grad.add_scaled(&g, 1.0);
            }
            let inv = 1.0 / chunk.len() as f64;
            loss *= inv;
            grad.scale(inv);
            if !loss.is_finite() || !grad.norm().is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    batch: batch_idx,
                    param_norm: weights.norm(),
                });
            }
            if let Some(max) = opts.clip_norm {
                let norm = grad.norm();
                if norm > max {
                    grad.scale(max / norm);
                }
            }
            step += 1;
            adam_step(&mut weights, &grad, &mut m, &mut v, opts, step);
            losses.push(LossPoint { step, epoch, loss });
        }
        if let Some(last) = losses.last() {
            log::debug!("epoch {epoch}: loss {:.6}", last.loss);
        }
    }
    Ok(TrainOutcome { weights, losses })
}

fn adam_step(
    weights: &mut ModelWeights,
    grad: &ModelWeights,
    m: &mut ModelWeights,
    v: &mut ModelWeights,
    opts: &TrainOptions,
    step: usize,
) {
    let bc1 = 1.0 - opts.beta1.powi(step as i32);
    let bc2 = 1.0 - opts.beta2.powi(step as i32);
    let params = weights.tensors_mut();
    let firsts = m.tensors_mut();
    let seconds = v.tensors_mut();
    for ((((_, p), (_, g)), (_, mt)), (_, vt)) in params.into_iter().zip(grad.tensors()).zip(firsts).zip(seconds) {
        let (p, g, mt, vt) = (p.data_mut(), g.data(), mt.data_mut(), vt.data_mut());
        for i in 0..p.len() {
            mt[i] = opts.beta1 * mt[i] + (1.0 - opts.beta1) * g[i];
            vt[i] = opts.beta2 * vt[i] + (1.0 - opts.beta2) * g[i] * g[i];
            let mhat = mt[i] / bc1;
            let vhat = vt[i] / bc2;
            p[i] -= opts.lr * mhat / (vhat.sqrt() + opts.eps);
        }
    }
}
