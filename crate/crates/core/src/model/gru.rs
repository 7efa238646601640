// SPDX-License-Identifier: MIT OR Apache-2.0

//! Bidirectional GRU layer: forward recurrence and its hand-derived
//! backward pass.

use super::weights::{GruDirection, GruLayer};
use crate::tensor::{axpy, dot, matmul_bt, Tensor};

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Activations retained for backprop through one direction. Every buffer is
/// indexed by *processing* step, so the backward direction reads it in the
/// same order it was written.
#[derive(Debug, Default, Clone)]
pub(crate) struct DirCache {
    /// `(T + 1) × H`; row 0 is the zero initial state.
    hs: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    /// `U_n · h_{t-1}` before the reset gate is applied.
    q: Vec<f64>,
}

#[derive(Debug, Default, Clone)]
pub(crate) struct LayerCache {
    pub(crate) input: Option<Tensor>,
    fwd: DirCache,
    bwd: DirCache,
}

/// `X · Wᵀ + b` for every time step.
fn project(xs: &Tensor, w: &Tensor, b: &Tensor) -> Vec<f64> {
    let mut p = matmul_bt(xs, w).expect("GRU input width checked by caller").into_data();
    let h = b.numel();
    for row in p.chunks_exact_mut(h) {
        for (v, bias) in row.iter_mut().zip(b.data()) {
            *v += bias;
        }
    }
    p
}

/// Runs one direction over `xs` (`T × I`), writing `h_t` into columns
/// `offset..offset + H` of `out` (`T × width`).
fn run_direction(
    cell: &GruDirection,
    xs: &Tensor,
    reverse: bool,
    out: &mut [f64],
    width: usize,
    offset: usize,
    mut cache: Option<&mut DirCache>,
) {
    let steps = xs.dim(0);
    let hidden = cell.hidden();
    let xz = project(xs, &cell.w_z, &cell.b_z);
    let xr = project(xs, &cell.w_r, &cell.b_r);
    let xn = project(xs, &cell.w_n, &cell.b_n);

    if let Some(c) = cache.as_deref_mut() {
        c.hs = vec![0.0; (steps + 1) * hidden];
        c.z = vec![0.0; steps * hidden];
        c.r = vec![0.0; steps * hidden];
        c.n = vec![0.0; steps * hidden];
        c.q = vec![0.0; steps * hidden];
    }

    let mut h = vec![0.0; hidden];
    let mut next = vec![0.0; hidden];
    for s in 0..steps {
        let t = if reverse { steps - 1 - s } else { s };
        let base = t * hidden;
        for i in 0..hidden {
            let z = sigmoid(xz[base + i] + dot(cell.u_z.row(i), &h));
            let r = sigmoid(xr[base + i] + dot(cell.u_r.row(i), &h));
            let q = dot(cell.u_n.row(i), &h);
            let n = (xn[base + i] + r * q).tanh();
            next[i] = (1.0 - z) * n + z * h[i];
            if let Some(c) = cache.as_deref_mut() {
                let k = s * hidden + i;
                c.z[k] = z;
                c.r[k] = r;
                c.n[k] = n;
                c.q[k] = q;
            }
        }
        std::mem::swap(&mut h, &mut next);
        out[t * width + offset..t * width + offset + hidden].copy_from_slice(&h);
        if let Some(c) = cache.as_deref_mut() {
            c.hs[(s + 1) * hidden..(s + 2) * hidden].copy_from_slice(&h);
        }
    }
}

/// Bidirectional layer: `T × I` → `T × 2H` (`[forward | backward]`).
pub(crate) fn layer_forward(layer: &GruLayer, xs: &Tensor, cache: Option<&mut LayerCache>) -> Tensor {
    let steps = xs.dim(0);
    let hidden = layer.fwd.hidden();
    let width = 2 * hidden;
    let mut out = vec![0.0; steps * width];
    match cache {
        Some(c) => {
            run_direction(&layer.fwd, xs, false, &mut out, width, 0, Some(&mut c.fwd));
            run_direction(&layer.bwd, xs, true, &mut out, width, hidden, Some(&mut c.bwd));
            c.input = Some(xs.clone());
        }
        None => {
            run_direction(&layer.fwd, xs, false, &mut out, width, 0, None);
            run_direction(&layer.bwd, xs, true, &mut out, width, hidden, None);
        }
    }
    Tensor::from_parts(vec![steps, width], out)
}

/// Backprop through one direction.
///
/// `d_out` is `T × width` holding `∂L/∂h_t` in columns `offset..offset+H`.
/// Parameter gradients accumulate into `grad`; `∂L/∂x` accumulates into
/// `d_xs` (`T × I`).
#[allow(clippy::too_many_arguments)]
fn backward_direction(
    cell: &GruDirection,
    xs: &Tensor,
    reverse: bool,
    cache: &DirCache,
    d_out: &[f64],
    width: usize,
    offset: usize,
    grad: &mut GruDirection,
    d_xs: &mut [f64],
) {
    let steps = xs.dim(0);
    let hidden = cell.hidden();
    let input = cell.input();
    // Pre-activation gradients, time-indexed.
    let mut d_az = vec![0.0; steps * hidden];
    let mut d_ar = vec![0.0; steps * hidden];
    let mut d_an = vec![0.0; steps * hidden];

    let mut dh = vec![0.0; hidden];
    let mut dh_prev = vec![0.0; hidden];
    let mut dq = vec![0.0; hidden];
    for s in (0..steps).rev() {
        let t = if reverse { steps - 1 - s } else { s };
        let row = &d_out[t * width + offset..t * width + offset + hidden];
        for (a, b) in dh.iter_mut().zip(row) {
            *a += b;
        }
        let h_prev = &cache.hs[s * hidden..(s + 1) * hidden];
        for i in 0..hidden {
            let k = s * hidden + i;
            let (z, r, n, q) = (cache.z[k], cache.r[k], cache.n[k], cache.q[k]);
            let dn = dh[i] * (1.0 - z);
            let dz = dh[i] * (h_prev[i] - n);
            dh_prev[i] = dh[i] * z;
            let an = dn * (1.0 - n * n);
            let az = dz * z * (1.0 - z);
            let ar = an * q * r * (1.0 - r);
            dq[i] = an * r;
            d_az[t * hidden + i] = az;
            d_ar[t * hidden + i] = ar;
            d_an[t * hidden + i] = an;
        }
        for i in 0..hidden {
            let (az, ar, qi) = (d_az[t * hidden + i], d_ar[t * hidden + i], dq[i]);
            axpy(az, h_prev, grad.u_z.row_mut(i));
            axpy(ar, h_prev, grad.u_r.row_mut(i));
            axpy(qi, h_prev, grad.u_n.row_mut(i));
            axpy(az, cell.u_z.row(i), &mut dh_prev);
            axpy(ar, cell.u_r.row(i), &mut dh_prev);
            axpy(qi, cell.u_n.row(i), &mut dh_prev);
        }
        std::mem::swap(&mut dh, &mut dh_prev);
    }

    for t in 0..steps {
        let x = xs.row(t);
        let dx = &mut d_xs[t * input..(t + 1) * input];
        for i in 0..hidden {
            let k = t * hidden + i;
            let (az, ar, an) = (d_az[k], d_ar[k], d_an[k]);
            axpy(az, x, grad.w_z.row_mut(i));
            axpy(ar, x, grad.w_r.row_mut(i));
            axpy(an, x, grad.w_n.row_mut(i));
            grad.b_z.data_mut()[i] += az;
            grad.b_r.data_mut()[i] += ar;
            grad.b_n.data_mut()[i] += an;
            axpy(az, cell.w_z.row(i), dx);
            axpy(ar, cell.w_r.row(i), dx);
            axpy(an, cell.w_n.row(i), dx);
        }
    }
}

/// Backprop through a bidirectional layer; returns `∂L/∂input` (`T × I`).
pub(crate) fn layer_backward(layer: &GruLayer, cache: &LayerCache, d_out: &Tensor, grad: &mut GruLayer) -> Tensor {
    let xs = cache.input.as_ref().expect("layer cache populated by forward");
    let width = d_out.dim(1);
    let hidden = layer.fwd.hidden();
    let mut d_xs = vec![0.0; xs.numel()];
    backward_direction(
        &layer.fwd,
        xs,
        false,
        &cache.fwd,
        d_out.data(),
        width,
        0,
        &mut grad.fwd,
        &mut d_xs,
    );
    backward_direction(
        &layer.bwd,
        xs,
        true,
        &cache.bwd,
        d_out.data(),
        width,
        hidden,
        &mut grad.bwd,
        &mut d_xs,
    );
    Tensor::from_parts(xs.shape().to_vec(), d_xs)
}
