// SPDX-License-Identifier: MIT OR Apache-2.0

use std::f64::consts::PI;

use super::Tensor;
use crate::error::{Error, Result};

/// Dot product with four independent accumulators.
///
/// The summation order is fixed, so results are bit-reproducible; it differs
/// from a naive left fold, which matters only when comparing at the ulp level.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha * x`
#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Output length of a 1-D convolution.
///
/// Returns `None` when the padded input is shorter than the kernel.
pub fn conv1d_output_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = len + 2 * padding;
    if kernel == 0 || stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Zero-padded strided 1-D convolution.
///
/// `input` is `C_in × T`, `weight` is `C_out × C_in × K`, `bias` is `C_out`;
/// the result is `C_out × T_out` with
/// `out[c, t] = bias[c] + Σ_{c', k} weight[c, c', k] · padded[c', t·stride + k]`.
pub fn conv1d(input: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    if input.ndim() != 2 {
        return Err(Error::dim("conv1d input rank", 2, input.ndim()));
    }
    if weight.ndim() != 3 {
        return Err(Error::dim("conv1d weight rank", 3, weight.ndim()));
    }
    let (c_in, len) = (input.dim(0), input.dim(1));
    let (c_out, w_in, kernel) = (weight.dim(0), weight.dim(1), weight.dim(2));
    if w_in != c_in {
        return Err(Error::dim("conv1d in_channels", w_in, c_in));
    }
    bias.expect_shape("conv1d bias", &[c_out])?;
    if stride == 0 {
        return Err(Error::arg("conv1d stride must be >= 1"));
    }
    let t_out = conv1d_output_len(len, kernel, stride, padding).ok_or_else(|| {
        Error::arg(format!(
            "conv1d padded length {} shorter than kernel {kernel}",
            len + 2 * padding
        ))
    })?;

    let x = input.data();
    let w = weight.data();
    let mut out = vec![0.0; c_out * t_out];
    for c in 0..c_out {
        let row = &mut out[c * t_out..(c + 1) * t_out];
        row.fill(bias.data()[c]);
        for ci in 0..c_in {
            let taps = &w[(c * c_in + ci) * kernel..(c * c_in + ci + 1) * kernel];
            let xs = &x[ci * len..(ci + 1) * len];
            for (t, o) in row.iter_mut().enumerate() {
                let start = (t * stride) as isize - padding as isize;
                let mut acc = 0.0;
                for (k, &wk) in taps.iter().enumerate() {
                    let pos = start + k as isize;
                    if pos >= 0 && (pos as usize) < len {
                        acc += wk * xs[pos as usize];
                    }
                }
                *o += acc;
            }
        }
    }
    Ok(Tensor::from_parts(vec![c_out, t_out], out))
}

/// `a · b` for `a: m × k`, `b: k × n`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.ndim() != 2 || b.ndim() != 2 {
        return Err(Error::arg("matmul expects 2-D operands"));
    }
    let (m, k) = (a.dim(0), a.dim(1));
    if b.dim(0) != k {
        return Err(Error::dim("matmul inner", k, b.dim(0)));
    }
    let n = b.dim(1);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in a.row(i).iter().enumerate() {
            axpy(aip, b.row(p), orow);
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// `a · bᵀ` for `a: m × k`, `b: n × k`; the natural product for row-major
/// weight matrices stored as `out_features × in_features`.
pub fn matmul_bt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.ndim() != 2 || b.ndim() != 2 {
        return Err(Error::arg("matmul_bt expects 2-D operands"));
    }
    let (m, k) = (a.dim(0), a.dim(1));
    if b.dim(1) != k {
        return Err(Error::dim("matmul_bt inner", k, b.dim(1)));
    }
    let n = b.dim(0);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = a.row(i);
        for j in 0..n {
            out[i * n + j] = dot(arow, b.row(j));
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// Unnormalized DCT-II: `c[k] = Σ_n v[n]·cos(π·k·(2n+1)/(2N))`.
pub fn dct_ii(v: &Tensor) -> Result<Tensor> {
    if v.ndim() != 1 {
        return Err(Error::dim("dct_ii rank", 1, v.ndim()));
    }
    let table = DctTable::new(v.numel(), v.numel());
    let mut out = vec![0.0; v.numel()];
    table.apply(v.data(), &mut out);
    Ok(Tensor::from_parts(vec![v.numel()], out))
}

/// Precomputed cosine basis for the first `n_coeffs` DCT-II coefficients of
/// length-`n` vectors.
#[derive(Debug, Clone)]
pub struct DctTable {
    n: usize,
    n_coeffs: usize,
    basis: Vec<f64>,
}

impl DctTable {
    pub fn new(n: usize, n_coeffs: usize) -> Self {
        assert!(n >= 1 && n_coeffs <= n, "invalid DCT table {n_coeffs}/{n}");
        let mut basis = Vec::with_capacity(n * n_coeffs);
        for k in 0..n_coeffs {
            for i in 0..n {
                basis.push((PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos());
            }
        }
        Self { n, n_coeffs, basis }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn n_coeffs(&self) -> usize {
        self.n_coeffs
    }

    /// Writes the first `n_coeffs` coefficients of `v` into `out`.
    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        assert_eq!(v.len(), self.n);
        assert_eq!(out.len(), self.n_coeffs);
        for (k, o) in out.iter_mut().enumerate() {
            *o = dot(&self.basis[k * self.n..(k + 1) * self.n], v);
        }
    }
}

/// Sample Pearson correlation of two equally long sequences.
///
/// Fails with [`Error::Degenerate`] when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim("pearson length", a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(Error::arg("pearson needs at least two values"));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Degenerate("zero variance in pearson argument".into()));
    }
    // sqrt(saa * sbb) rather than sqrt(saa) * sqrt(sbb): exact 1.0 for a == b.
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::RngStream;
    use proptest::prelude::*;

    fn random(shape: &[usize], stream: u64) -> Tensor {
        let n = shape.iter().product();
        let data = RngStream::new(7, stream).draw_normal(n);
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    /// Direct triple loop with explicit zero padding.
    fn conv_oracle(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Vec<Vec<f64>> {
        let (c_in, len) = (x.dim(0), x.dim(1));
        let (c_out, k) = (w.dim(0), w.dim(2));
        let padded: Vec<Vec<f64>> = (0..c_in)
            .map(|c| {
                let mut row = vec![0.0; len + 2 * pad];
                row[pad..pad + len].copy_from_slice(x.row(c));
                row
            })
            .collect();
        let t_out = (len + 2 * pad - k) / stride + 1;
        (0..c_out)
            .map(|c| {
                (0..t_out)
                    .map(|t| {
                        let mut s = b.data()[c];
                        for (ci, row) in padded.iter().enumerate() {
                            for kk in 0..k {
                                s += w.data()[(c * c_in + ci) * k + kk] * row[t * stride + kk];
                            }
                        }
                        s
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn conv_length_arithmetic() {
        assert_eq!(conv1d_output_len(100, 4, 4, 2), Some(26));
        assert_eq!(conv1d_output_len(1024, 4, 4, 2), Some(257));
        assert_eq!(conv1d_output_len(2, 4, 1, 0), None);
        let x = Tensor::zeros(&[1, 100]);
        let w = Tensor::zeros(&[3, 1, 4]);
        let out = conv1d(&x, &w, &Tensor::zeros(&[3]), 4, 2).unwrap();
        assert_eq!(out.shape(), &[3, 26]);
    }

    #[test]
    fn conv_identity_kernel() {
        let x = random(&[2, 9], 1);
        let mut w = Tensor::zeros(&[2, 2, 3]);
        w.data_mut()[0] = 1.0; // out0 <- in0, k=0
        w.data_mut()[(2 + 1) * 3] = 1.0; // out1 <- in1, k=0
        let out = conv1d(&x, &w, &Tensor::zeros(&[2]), 1, 0).unwrap();
        assert_eq!(out.shape(), &[2, 7]);
        for c in 0..2 {
            assert_eq!(out.row(c), &x.row(c)[..7]);
        }
    }

    #[test]
    fn conv_matches_loop_oracle() {
        let x = random(&[2, 7], 2);
        let w = random(&[3, 2, 3], 3);
        let b = random(&[3], 4);
        let out = conv1d(&x, &w, &b, 2, 1).unwrap();
        let want = conv_oracle(&x, &w, &b, 2, 1);
        assert_eq!(out.shape(), &[3, want[0].len()]);
        for (c, row) in want.iter().enumerate() {
            for (t, v) in row.iter().enumerate() {
                assert!((out.at(c, t) - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_shape_errors_name_axis() {
        let x = Tensor::zeros(&[3, 10]);
        let w = Tensor::zeros(&[4, 2, 3]);
        let err = conv1d(&x, &w, &Tensor::zeros(&[4]), 1, 0).unwrap_err();
        assert!(err.to_string().contains("in_channels"), "{err}");
        let w = Tensor::zeros(&[4, 3, 3]);
        let err = conv1d(&x, &w, &Tensor::zeros(&[5]), 1, 0).unwrap_err();
        assert!(err.to_string().contains("bias"), "{err}");
    }

    #[test]
    fn conv_is_linear_without_bias() {
        let x = random(&[3, 40], 10);
        let y = random(&[3, 40], 11);
        let w = random(&[5, 3, 4], 12);
        let zero = Tensor::zeros(&[5]);
        let (a, b) = (1.7, -0.3);
        let lhs = conv1d(&x.lincomb(a, &y, b).unwrap(), &w, &zero, 4, 2).unwrap();
        let rhs = conv1d(&x, &w, &zero, 4, 2)
            .unwrap()
            .lincomb(a, &conv1d(&y, &w, &zero, 4, 2).unwrap(), b)
            .unwrap();
        assert!(lhs.max_abs_diff(&rhs) < 1e-10);
    }

    #[test]
    fn matmul_variants_agree() {
        let a = random(&[4, 6], 20);
        let b = random(&[6, 3], 21);
        let ab = matmul(&a, &b).unwrap();
        let ab2 = matmul_bt(&a, &b.transpose()).unwrap();
        assert!(ab.max_abs_diff(&ab2) < 1e-12);
        for i in 0..4 {
            for j in 0..3 {
                let want: f64 = (0..6).map(|p| a.at(i, p) * b.at(p, j)).sum();
                assert!((ab.at(i, j) - want).abs() < 1e-12);
            }
        }
        assert!(matmul(&a, &a).is_err());
    }

    fn dct_oracle(v: &[f64]) -> Vec<f64> {
        let n = v.len();
        (0..n)
            .map(|k| {
                v.iter()
                    .enumerate()
                    .map(|(i, x)| x * (PI * k as f64 * (2.0 * i as f64 + 1.0) / (2.0 * n as f64)).cos())
                    .sum()
            })
            .collect()
    }

    #[test]
    fn dct_constant_excites_dc_only() {
        let a = 1.25;
        let c = dct_ii(&Tensor::full(&[16], a)).unwrap();
        assert!((c.data()[0] - 16.0 * a).abs() < 1e-12);
        for k in 1..16 {
            assert!(c.data()[k].abs() < 1e-12, "k={k}: {}", c.data()[k]);
        }
        let single = dct_ii(&Tensor::vector(&[3.5]).unwrap()).unwrap();
        assert_eq!(single.data(), &[3.5]);
    }

    #[test]
    fn dct_matches_definition() {
        for n in [1usize, 2, 5, 8, 13, 32] {
            let v = random(&[n], 30 + n as u64);
            let c = dct_ii(&v).unwrap();
            for (got, want) in c.data().iter().zip(dct_oracle(v.data())) {
                assert!((got - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pearson_reference_values() {
        let x = [0.3, -1.0, 2.5, 4.0, 0.0];
        assert_eq!(pearson(&x, &x).unwrap(), 1.0);
        let neg: Vec<f64> = x.iter().map(|v| -2.0 * v + 7.0).collect();
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
        // a=[1,2,3,4], b=[1,2,2,5]: means 2.5, 2.5; sab=6, saa=5, sbb=9
        let want = 6.0 / (5.0f64 * 9.0).sqrt();
        let got = pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 2.0, 5.0]).unwrap();
        assert!((got - want).abs() < 1e-15, "{got} vs {want}");
    }

    #[test]
    fn pearson_degenerate_inputs() {
        assert!(matches!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(pearson(&[1.0, 2.0], &[5.0, 5.0]), Err(Error::Degenerate(_))));
        assert!(pearson(&[1.0], &[1.0]).is_err());
        assert!(pearson(&[1.0, 2.0], &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn pearson_sign_invariance(
            a in prop::collection::vec(-10.0f64..10.0, 3..40),
            seed in 0u64..1000,
            s in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0],
            t in -10.0f64..10.0,
        ) {
            let b = RngStream::new(seed, 0).draw_normal(a.len());
            prop_assume!(pearson(&a, &b).is_ok());
            let bt: Vec<f64> = b.iter().map(|v| s * v + t).collect();
            let base = pearson(&a, &b).unwrap();
            let moved = pearson(&a, &bt).unwrap();
            prop_assert!((moved - s.signum() * base).abs() < 1e-12);
        }

        #[test]
        fn dct_is_linear(n in 1usize..32, seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let x = Tensor::new(vec![n], RngStream::new(seed, 1).draw_normal(n)).unwrap();
            let y = Tensor::new(vec![n], RngStream::new(seed, 2).draw_normal(n)).unwrap();
            let lhs = dct_ii(&x.lincomb(a, &y, b).unwrap()).unwrap();
            let rhs = dct_ii(&x).unwrap().lincomb(a, &dct_ii(&y).unwrap(), b).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-10);
        }
    }
}
