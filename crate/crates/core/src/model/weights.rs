// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::Path;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::plab::TensorArchive;
use crate::tensor::{RngStream, Tensor};

/// Parameters of one GRU direction.
///
/// Input matrices are `H × I`, recurrent matrices `H × H`, biases `H`.
/// Gates follow `z = σ(W_z x + U_z h + b_z)`, `r = σ(W_r x + U_r h + b_r)`,
/// `n = tanh(W_n x + r ⊙ (U_n h) + b_n)`, `h' = (1 − z) ⊙ n + z ⊙ h`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruDirection {
    pub w_z: Tensor,
    pub w_r: Tensor,
    pub w_n: Tensor,
    pub u_z: Tensor,
    pub u_r: Tensor,
    pub u_n: Tensor,
    pub b_z: Tensor,
    pub b_r: Tensor,
    pub b_n: Tensor,
}

const GATE_NAMES: [&str; 9] = ["w_z", "w_r", "w_n", "u_z", "u_r", "u_n", "b_z", "b_r", "b_n"];

impl GruDirection {
    fn zeros(input: usize, hidden: usize) -> Self {
        let w = || Tensor::zeros(&[hidden, input]);
        let u = || Tensor::zeros(&[hidden, hidden]);
        let b = || Tensor::zeros(&[hidden]);
        Self {
            w_z: w(),
            w_r: w(),
            w_n: w(),
            u_z: u(),
            u_r: u(),
            u_n: u(),
            b_z: b(),
            b_r: b(),
            b_n: b(),
        }
    }

    fn tensors(&self) -> [&Tensor; 9] {
        [
            &self.w_z, &self.w_r, &self.w_n, &self.u_z, &self.u_r, &self.u_n, &self.b_z, &self.b_r, &self.b_n,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 9] {
        let Self {
            w_z,
            w_r,
            w_n,
            u_z,
            u_r,
            u_n,
            b_z,
            b_r,
            b_n,
        } = self;
        [w_z, w_r, w_n, u_z, u_r, u_n, b_z, b_r, b_n]
    }

    pub fn hidden(&self) -> usize {
        self.u_z.dim(0)
    }

    pub fn input(&self) -> usize {
        self.w_z.dim(1)
    }
}

/// Forward- and backward-in-time directions of one recurrent layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GruLayer {
    pub fwd: GruDirection,
    pub bwd: GruDirection,
}

/// All decoder parameters. Tensor shapes are fully determined by `config`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    config: ModelConfig,
    /// `conv_channels × in_channels × kernel`
    pub conv_w: Tensor,
    /// `conv_channels`
    pub conv_b: Tensor,
    pub layers: Vec<GruLayer>,
    /// `mel_bins × 2·rnn_hidden`
    pub head_w: Tensor,
    /// `mel_bins`
    pub head_b: Tensor,
}

impl ModelWeights {
    /// All-zero parameters (also the layout used for gradients and optimizer
    /// moments).
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let h = config.rnn_hidden;
        let layers = (0..config.rnn_layers)
            .map(|l| GruLayer {
                fwd: GruDirection::zeros(config.gru_input(l), h),
                bwd: GruDirection::zeros(config.gru_input(l), h),
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            conv_w: Tensor::zeros(&[config.conv_channels, config.in_channels, config.kernel]),
            conv_b: Tensor::zeros(&[config.conv_channels]),
            layers,
            head_w: Tensor::zeros(&[config.mel_bins, config.rnn_width()]),
            head_b: Tensor::zeros(&[config.mel_bins]),
        })
    }

    /// Uniform fan-in initialization, `U(−1/√fan_in, 1/√fan_in)` per tensor.
    ///
    /// Fan-in is `in_channels·kernel` for the convolution, the input width
    /// for `W_*`, `rnn_hidden` for `U_*` and GRU biases, and `2·rnn_hidden`
    /// for the head. Tensors are filled in [`tensors`](Self::tensors) order.
    pub fn init(config: &ModelConfig, rng: &mut RngStream) -> Result<Self> {
        let mut w = Self::zeros(config)?;
        let conv_fan = (config.in_channels * config.kernel) as f64;
        let head_fan = config.rnn_width() as f64;
        let hidden_fan = config.rnn_hidden as f64;
        for (name, t) in w.tensors_mut() {
            let fan = if name.starts_with("conv.") {
                conv_fan
            } else if name.starts_with("head.") {
                head_fan
            } else if name.ends_with(".w_z") || name.ends_with(".w_r") || name.ends_with(".w_n") {
                t.dim(1) as f64
            } else {
                hidden_fan
            };
            let bound = 1.0 / fan.sqrt();
            for v in t.data_mut() {
                *v = rng.uniform(-bound, bound);
            }
        }
        Ok(w)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Every parameter tensor with its canonical name, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("conv.weight".to_owned(), &self.conv_w),
            ("conv.bias".to_owned(), &self.conv_b),
        ];
        for (l, layer) in self.layers.iter().enumerate() {
            for (dir, cell) in [("fwd", &layer.fwd), ("bwd", &layer.bwd)] {
                for (gate, t) in GATE_NAMES.iter().zip(cell.tensors()) {
                    out.push((format!("gru.l{l}.{dir}.{gate}"), t));
                }
            }
        }
        out.push(("head.weight".to_owned(), &self.head_w));
        out.push(("head.bias".to_owned(), &self.head_b));
        out
    }

    /// Mutable counterpart of [`tensors`](Self::tensors), same order.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![
            ("conv.weight".to_owned(), &mut self.conv_w),
            ("conv.bias".to_owned(), &mut self.conv_b),
        ];
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (dir, cell) in [("fwd", &mut layer.fwd), ("bwd", &mut layer.bwd)] {
                for (gate, t) in GATE_NAMES.iter().zip(cell.tensors_mut()) {
                    out.push((format!("gru.l{l}.{dir}.{gate}"), t));
                }
            }
        }
        out.push(("head.weight".to_owned(), &mut self.head_w));
        out.push(("head.bias".to_owned(), &mut self.head_b));
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.numel()).sum()
    }

    /// L2 norm over every parameter.
    pub fn norm(&self) -> f64 {
        self.tensors().iter().map(|(_, t)| t.sum_sq()).sum::<f64>().sqrt()
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelWeights, scale: f64) {
        for ((_, dst), (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            crate::tensor::axpy(scale, src.data(), dst.data_mut());
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, t) in self.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn bit_eq(&self, other: &ModelWeights) -> bool {
        self.config == other.config
            && self
                .tensors()
                .iter()
                .zip(other.tensors())
                .all(|((na, a), (nb, b))| *na == nb && a.bit_eq(b))
    }

    pub fn to_archive(&self) -> TensorArchive {
        let mut a = TensorArchive::new();
        for (name, t) in self.tensors() {
            a.push(name, t.clone()).expect("parameter names are unique");
        }
        a
    }

    /// Rebuilds weights from an archive, checking every shape against
    /// `config`.
    pub fn from_archive(archive: &TensorArchive, config: &ModelConfig) -> Result<Self> {
        let mut w = Self::zeros(config)?;
        let expected = w.tensors().len();
        if archive.len() != expected {
            return Err(Error::dim("weight tensor count", expected, archive.len()));
        }
        for (name, t) in w.tensors_mut() {
            let src = archive.require(&name)?;
            src.expect_shape(&name, t.shape())?;
            *t = src.clone();
        }
        Ok(w)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive().write(path)
    }

    pub fn load(path: &Path, config: &ModelConfig) -> Result<Self> {
        Self::from_archive(&TensorArchive::read(path)?, config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_size_shapes() {
        let w = ModelWeights::zeros(&ModelConfig::full(16)).unwrap();
        assert_eq!(w.conv_w.shape(), &[64, 16, 4]);
        assert_eq!(w.layers.len(), 3);
        assert_eq!(w.layers[0].fwd.w_z.shape(), &[256, 64]);
        assert_eq!(w.layers[1].fwd.w_n.shape(), &[256, 512]);
        assert_eq!(w.layers[2].bwd.u_r.shape(), &[256, 256]);
        assert_eq!(w.head_w.shape(), &[80, 512]);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let cfg = ModelConfig::desk();
        let a = ModelWeights::init(&cfg, &mut RngStream::new(1, 0)).unwrap();
        let b = ModelWeights::init(&cfg, &mut RngStream::new(1, 0)).unwrap();
        let c = ModelWeights::init(&cfg, &mut RngStream::new(2, 0)).unwrap();
        assert!(a.bit_eq(&b));
        assert!(!a.bit_eq(&c));
        let bound = 1.0 / ((16 * 4) as f64).sqrt();
        assert!(a.conv_w.data().iter().all(|v| v.abs() <= bound));
        assert!(a.conv_w.data().iter().any(|v| v.abs() > 0.5 * bound));
        let gru_bound = 1.0 / 64f64.sqrt();
        assert!(a.layers[1].fwd.w_z.data().iter().all(|v| v.abs() <= gru_bound));
    }

    #[test]
    fn archive_round_trip_and_shape_check() {
        let cfg = ModelConfig::desk();
        let w = ModelWeights::init(&cfg, &mut RngStream::new(3, 0)).unwrap();
        let back = ModelWeights::from_archive(&w.to_archive(), &cfg).unwrap();
        assert!(back.bit_eq(&w));
        let mut other = cfg.clone();
        other.rnn_hidden = 16;
        assert!(ModelWeights::from_archive(&w.to_archive(), &other).is_err());
    }

    #[test]
    fn parameter_names_unique() {
        let w = ModelWeights::zeros(&ModelConfig::desk()).unwrap();
        let mut names: Vec<String> = w.tensors().into_iter().map(|(n, _)| n).collect();
        let n = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), n);
        assert_eq!(n, 2 + 3 * 2 * 9 + 2);
    }
}
