// SPDX-License-Identifier: MIT OR Apache-2.0

use super::gru::layer_forward;
use super::{ModelWeights, TapSite};
use crate::error::{Error, Result};
use crate::tensor::{conv1d, matmul_bt, Tensor};

/// Activations captured during one forward pass.
///
/// When hooks are active, each recorded tensor is the *edited* value that
/// fed the downstream layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `conv_channels × T_c`
    pub conv_out: Tensor,
    /// Outputs of recurrent layers `0..rnn_layers-1`, each `T_c × 2H`.
    pub hidden_layers: Vec<Tensor>,
    /// Final recurrent layer output, `T_c × 2H`.
    pub rnn_out: Tensor,
    /// `T_c × mel_bins`
    pub mel_pred: Tensor,
}

impl ForwardTrace {
    pub fn frames(&self) -> usize {
        self.rnn_out.dim(0)
    }

    /// Tensor recorded at `site`.
    pub fn site(&self, site: TapSite) -> Result<&Tensor> {
        match site {
            TapSite::ConvOut => Ok(&self.conv_out),
            TapSite::RnnOut => Ok(&self.rnn_out),
            TapSite::RnnLayer(l) => self
                .hidden_layers
                .get(l)
                .ok_or_else(|| Error::arg(format!("trace has no rnn_layer_{l}"))),
        }
    }
}

type Edit<'a> = Box<dyn Fn(&Tensor) -> Tensor + 'a>;

/// Activation rewrites keyed by tap site.
///
/// An edit receives the tensor produced at its site and returns the
/// replacement; it must preserve the shape. Several edits on one site run in
/// insertion order.
#[derive(Default)]
pub struct Hooks<'a> {
    edits: Vec<(TapSite, Edit<'a>)>,
}

impl<'a> Hooks<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an edit at `site`.
    pub fn on(mut self, site: TapSite, edit: impl Fn(&Tensor) -> Tensor + 'a) -> Self {
        self.edits.push((site, Box::new(edit)));
        self
    }

    /// Replaces the tensor at `site` wholesale.
    pub fn replace(self, site: TapSite, value: &'a Tensor) -> Self {
        self.on(site, move |_| value.clone())
    }

    pub fn is_empty(&self) -> bool {
        self.edits.is_empty()
    }

    fn sites(&self) -> impl Iterator<Item = TapSite> + '_ {
        self.edits.iter().map(|(s, _)| *s)
    }

    fn apply(&self, site: TapSite, mut value: Tensor) -> Result<Tensor> {
        for (s, edit) in &self.edits {
            if *s != site {
                continue;
            }
            let edited = edit(&value);
            if edited.shape() != value.shape() {
                return Err(Error::Intervention(format!(
                    "edit at {site} changed shape {:?} -> {:?}",
                    value.shape(),
                    edited.shape()
                )));
            }
            if !edited.is_finite() {
                return Err(Error::Intervention(format!(
                    "edit at {site} produced non-finite values"
                )));
            }
            value = edited;
        }
        Ok(value)
    }
}

/// Linear mel head: `rnn_out · W_headᵀ + b_head`.
pub fn head(w: &ModelWeights, rnn_out: &Tensor) -> Result<Tensor> {
    let width = w.config().rnn_width();
    if rnn_out.ndim() != 2 || rnn_out.dim(1) != width {
        return Err(Error::dim(
            "head input features",
            width,
            *rnn_out.shape().last().unwrap_or(&0),
        ));
    }
    let mut mel = matmul_bt(rnn_out, &w.head_w)?;
    let bins = w.config().mel_bins;
    for row in mel.data_mut().chunks_exact_mut(bins) {
        for (v, b) in row.iter_mut().zip(w.head_b.data()) {
            *v += b;
        }
    }
    Ok(mel)
}

/// Full forward pass with optional activation edits.
///
/// `x` is `in_channels × T`. With a hook at site ℓ the output is
/// `f_post-ℓ(edit(a_ℓ(x)))`.
pub fn forward(w: &ModelWeights, x: &Tensor, hooks: &Hooks<'_>) -> Result<ForwardTrace> {
    let cfg = w.config();
    if x.ndim() != 2 {
        return Err(Error::dim("input rank", 2, x.ndim()));
    }
    if x.dim(0) != cfg.in_channels {
        return Err(Error::dim("input channels", cfg.in_channels, x.dim(0)));
    }
    for site in hooks.sites() {
        cfg.check_site(site)?;
    }
    let conv = conv1d(x, &w.conv_w, &w.conv_b, cfg.stride, cfg.padding)?;
    let conv = hooks.apply(TapSite::ConvOut, conv)?;
    let (hidden_layers, rnn_out, mel_pred) = downstream(w, 0, conv.transpose(), hooks, true)?;
    Ok(ForwardTrace {
        conv_out: conv,
        hidden_layers,
        rnn_out,
        mel_pred,
    })
}

/// Runs `f_post-ℓ` on a supplied activation for `site`, applying any hooks
/// that sit strictly downstream of it.
///
/// Because every layer is deterministic, `resume(site, edit(a_ℓ(x)))` is
/// bit-identical to `forward(x)` with the same edit hooked at `site`; sweeps
/// use this to skip recomputing the unmodified upstream layers.
pub fn resume(w: &ModelWeights, site: TapSite, activation: &Tensor, hooks: &Hooks<'_>) -> Result<Tensor> {
    let cfg = w.config();
    cfg.check_site(site)?;
    if activation.ndim() != 2 {
        return Err(Error::dim(format!("{site} rank"), 2, activation.ndim()));
    }
    let frames = activation.dim(site.time_axis());
    activation.expect_shape(&site.to_string(), &cfg.site_shape(site, frames))?;
    for s in hooks.sites() {
        cfg.check_site(s)?;
    }
    let stage = site.stage(cfg.rnn_layers);
    let seq = if site == TapSite::ConvOut {
        activation.transpose()
    } else {
        activation.clone()
    };
    let (_, _, mel) = downstream(w, stage, seq, hooks, false)?;
    Ok(mel)
}

/// GRU layers `stage..` followed by the head. `seq` is time-major.
fn downstream(
    w: &ModelWeights,
    stage: usize,
    mut seq: Tensor,
    hooks: &Hooks<'_>,
    record: bool,
) -> Result<(Vec<Tensor>, Tensor, Tensor)> {
    let layers = w.layers.len();
    let mut hidden = Vec::new();
    for l in stage..layers {
        seq = layer_forward(&w.layers[l], &seq, None);
        let site = if l + 1 == layers {
            TapSite::RnnOut
        } else {
            TapSite::RnnLayer(l)
        };
        seq = hooks.apply(site, seq)?;
        if record && l + 1 < layers {
            hidden.push(seq.clone());
        }
    }
    let mel = head(w, &seq)?;
    Ok((hidden, seq, mel))
}
