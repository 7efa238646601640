// SPDX-License-Identifier: MIT OR Apache-2.0

//! Central finite-difference check of [`loss_and_grad`].

use rayon::prelude::*;

use super::gru::layer_forward;
use super::{head, loss_and_grad, mse, ModelWeights};
use crate::error::{Error, Result};
use crate::tensor::{conv1d, Tensor};

/// Gradients smaller than this are compared in absolute rather than relative
/// terms, since central differences cannot resolve them relatively.
pub const GRAD_FLOOR: f64 = 1e-6;

/// Which parameters to perturb.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradScope {
    All,
    /// Only the linear head (loss is exactly quadratic there).
    HeadOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |a − n| / max(|a|, |n|, GRAD_FLOOR)` over checked parameters.
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// First stage whose output changes when a given parameter moves.
#[derive(Debug, Clone, Copy)]
enum Stage {
    Conv,
    Layer(usize),
    Head,
}

fn stage_of(name: &str) -> Stage {
    if name.starts_with("conv.") {
        Stage::Conv
    } else if let Some(rest) = name.strip_prefix("gru.l") {
        let l = rest
            .split('.')
            .next()
            .and_then(|s| s.parse().ok())
            .expect("gru.l<idx> name");
        Stage::Layer(l)
    } else {
        Stage::Head
    }
}

/// Compares analytic `∂MSE/∂θ` with `(L(θ+ε) − L(θ−ε)) / 2ε` for every
/// parameter in `scope`. Only the stages downstream of a perturbed
/// parameter are recomputed.
pub fn grad_check(w: &ModelWeights, x: &Tensor, y: &Tensor, eps: f64, scope: GradScope) -> Result<GradCheckReport> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::arg(format!("finite-difference step must be > 0, got {eps}")));
    }
    let (_, grad) = loss_and_grad(w, x, y)?;
    let cfg = w.config();

    // Unperturbed stage inputs: index l holds the input of GRU layer l,
    // the last entry is the head input.
    let conv = conv1d(x, &w.conv_w, &w.conv_b, cfg.stride, cfg.padding)?;
    let mut inputs = vec![conv.transpose()];
    for layer in &w.layers {
        let next = layer_forward(layer, inputs.last().expect("non-empty"), None);
        inputs.push(next);
    }

    let loss_from = |wp: &ModelWeights, stage: Stage| -> Result<f64> {
        let (mut seq, first) = match stage {
            Stage::Conv => (
                conv1d(x, &wp.conv_w, &wp.conv_b, cfg.stride, cfg.padding)?.transpose(),
                0,
            ),
            Stage::Layer(l) => (inputs[l].clone(), l),
            Stage::Head => return mse(&head(wp, &inputs[wp.layers.len()])?, y),
        };
        for layer in &wp.layers[first..] {
            seq = layer_forward(layer, &seq, None);
        }
        mse(&head(wp, &seq)?, y)
    };

    let names: Vec<String> = w.tensors().into_iter().map(|(n, _)| n).collect();
    let mut items = Vec::new();
    for (ti, (name, t)) in w.tensors().into_iter().enumerate() {
        if scope == GradScope::HeadOnly && !name.starts_with("head.") {
            continue;
        }
        items.extend((0..t.numel()).map(|i| (ti, i)));
    }

    let numeric: Vec<Result<f64>> = items
        .par_iter()
        .map_init(
            || w.clone(),
            |wp, &(ti, i)| {
                let stage = stage_of(&names[ti]);
                let orig = w.tensors()[ti].1.data()[i];
                wp.tensors_mut()[ti].1.data_mut()[i] = orig + eps;
                let plus = loss_from(wp, stage);
                wp.tensors_mut()[ti].1.data_mut()[i] = orig - eps;
                let minus = loss_from(wp, stage);
                wp.tensors_mut()[ti].1.data_mut()[i] = orig;
                Ok((plus? - minus?) / (2.0 * eps))
            },
        )
        .collect();

    let grads = grad.tensors();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: items.len(),
    };
    for (&(ti, i), n) in items.iter().zip(numeric) {
        let n = n?;
        let a = grads[ti].1.data()[i];
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(GRAD_FLOOR);
        if rel > report.max_rel_err || report.worst_param.is_empty() {
            report = GradCheckReport {
                max_rel_err: rel,
                worst_param: names[ti].clone(),
                worst_index: i,
                analytic: a,
                numeric: n,
                checked: report.checked,
            };
        }
    }
    Ok(report)
}
