//! Batched jet propagation with a reverse sweep.
//!
//! Activations of every layer are stored as a `width x (C * P)` row-major
//! matrix where `P` is the number of points and `C` the number of jet
//! channels: the value, then `d` gradient components, then the packed upper
//! triangle of the Hessian. Column `c * P + p` holds channel `c` of point `p`.
//! Each linear layer is then one matrix product over all channels at once.

use std::mem::{ManuallyDrop, MaybeUninit};

use matrixmultiply::dgemm;
use serde::{Deserialize, Serialize};

use super::{hess_pairs, tanh, MlpParams};

/// How many derivatives of the network output to propagate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum JetOrder {
    Value,
    Gradient,
    Hessian,
}

impl JetOrder {
    pub fn channels(self, dim: usize) -> usize {
        match self {
            JetOrder::Value => 1,
            JetOrder::Gradient => 1 + dim,
            JetOrder::Hessian => 1 + dim + dim * (dim + 1) / 2,
        }
    }
}

/// Cached forward pass over a batch of points.
pub(crate) struct JetBatch {
    pub order: JetOrder,
    pub dim: usize,
    pub channels: usize,
    pub npts: usize,
    pairs: Vec<(usize, usize)>,
    /// `inputs[l]` is the input of layer `l`; the last entry is the network output.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of hidden layers.
    pre: Vec<Vec<f64>>,
}

/// `c = a * b + beta * c` for row-major matrices, `a: m x k`, `b: k x n`.
/// Transposes are expressed through the strides.
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the slices are at least as long as the strided extents asserted above,
    // and `c` does not alias `a` or `b` (distinct borrows).
    unsafe { raw_gemm(m, k, n, a, (rsa, csa), b, (rsb, csb), beta, c.as_mut_ptr()) }
}

/// Fresh `m x n` product `a * b` without zero-filling the destination first.
#[inline]
fn gemm_new(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
) -> Vec<f64> {
    debug_assert!(a.len() >= m * k && b.len() >= k * n);
    let len = m * n;
    if len == 0 {
        return Vec::new();
    }
    if k == 0 {
        return vec![0.0; len];
    }
    let mut out: Vec<MaybeUninit<f64>> = Vec::with_capacity(len);
    // SAFETY: with beta = 0 the kernel writes every element of C without reading
    // it (documented by `matrixmultiply`), so all `len` slots are initialized
    // before the buffer is reinterpreted as `Vec<f64>`.
    unsafe {
        out.set_len(len);
        raw_gemm(m, k, n, a, a_strides, b, b_strides, 0.0, out.as_mut_ptr().cast());
        let mut out = ManuallyDrop::new(out);
        Vec::from_raw_parts(out.as_mut_ptr().cast(), len, out.capacity())
    }
}

/// # Safety
/// `c` must be valid for writes of `m * n` elements and must not alias `a` or
/// `b`; when `beta != 0` it must also be initialized.
#[allow(clippy::too_many_arguments)]
#[inline]
unsafe fn raw_gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: *mut f64,
) {
    dgemm(
        m,
        k,
        n,
        1.0,
        a.as_ptr(),
        rsa as isize,
        csa as isize,
        b.as_ptr(),
        rsb as isize,
        csb as isize,
        beta,
        c,
        n as isize,
        1,
    );
}

impl JetBatch {
    /// Propagates jets for `points` (row-major, `P x dim`).
    pub fn forward(net: &MlpParams, points: &[f64], order: JetOrder) -> Self {
        let dim = net.input_dim();
        assert_eq!(points.len() % dim, 0, "points must be P x dim");
        let npts = points.len() / dim;
        let channels = order.channels(dim);
        let pairs = if order == JetOrder::Hessian {
            hess_pairs(dim)
        } else {
            Vec::new()
        };
        let ng = if order >= JetOrder::Gradient { dim } else { 0 };
        let cols = channels * npts;

        let mut z0 = vec![0.0; dim * cols];
        for i in 0..dim {
            let row = &mut z0[i * cols..(i + 1) * cols];
            for p in 0..npts {
                row[p] = points[p * dim + i];
            }
            if ng > 0 {
                row[(1 + i) * npts..(2 + i) * npts].fill(1.0);
            }
        }

        let n_layers = net.n_layers();
        let mut inputs = Vec::with_capacity(n_layers + 1);
        let mut pre = Vec::with_capacity(n_layers - 1);
        inputs.push(z0);
        let mut scratch = Scratch::default();
        for l in 0..n_layers {
            let n_in = net.layer_sizes()[l];
            let n_out = net.layer_sizes()[l + 1];
            let mut a = gemm_new(n_out, n_in, cols, net.weights(l), (n_in, 1), &inputs[l], (cols, 1));
            let b = net.biases(l);
            for r in 0..n_out {
                a[r * cols..r * cols + npts].iter_mut().for_each(|v| *v += b[r]);
            }
            if l + 1 < n_layers {
                let mut h = vec![0.0; n_out * cols];
                for (ar, hr) in a.chunks_exact(cols).zip(h.chunks_exact_mut(cols)) {
                    activate_row(ar, hr, npts, ng, &pairs, &mut scratch);
                }
                pre.push(a);
                inputs.push(h);
            } else {
                inputs.push(a);
            }
        }
        Self {
            order,
            dim,
            channels,
            npts,
            pairs,
            inputs,
            pre,
        }
    }

    /// Output channels, laid out as `channel * P + point`.
    pub fn output(&self) -> &[f64] {
        self.inputs.last().unwrap()
    }

    /// Reverse sweep. `out_adj` has the layout of [`Self::output`]. Parameter
    /// adjoints are accumulated into `param_grad` (flat layout); when
    /// `input_adj` is given, adjoints of the input coordinates are accumulated
    /// there (`P x dim`).
    pub fn backward(
        &self,
        net: &MlpParams,
        out_adj: &[f64],
        param_grad: &mut [f64],
        input_adj: Option<&mut [f64]>,
    ) {
        let cols = self.channels * self.npts;
        assert_eq!(out_adj.len(), cols);
        let n_layers = net.n_layers();
        let ng = if self.order >= JetOrder::Gradient { self.dim } else { 0 };

        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for win in net.layer_sizes().windows(2) {
            offsets.push(off);
            off += win[0] * win[1] + win[1];
        }

        let mut abar = out_adj.to_vec();
        for l in (0..n_layers).rev() {
            let n_in = net.layer_sizes()[l];
            let n_out = net.layer_sizes()[l + 1];
            let z = &self.inputs[l];
            let (wgrad, bgrad) =
                param_grad[offsets[l]..offsets[l] + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            // dW += Abar * Z^T
            gemm(n_out, cols, n_in, &abar, (cols, 1), z, (1, cols), 1.0, wgrad);
            for r in 0..n_out {
                bgrad[r] += abar[r * cols..r * cols + self.npts].iter().sum::<f64>();
            }
            if l == 0 && input_adj.is_none() {
                break;
            }
            // Zbar = W^T * Abar
            let mut zbar = gemm_new(n_in, n_out, cols, net.weights(l), (1, n_in), &abar, (cols, 1));
            if l == 0 {
                let xbar = input_adj.unwrap();
                for i in 0..self.dim {
                    for p in 0..self.npts {
                        xbar[p * self.dim + i] += zbar[i * cols + p];
                    }
                }
                break;
            }
            let a = &self.pre[l - 1];
            let h = &self.inputs[l];
            let mut scratch = Scratch::default();
            for ((ar, hr), br) in a
                .chunks_exact(cols)
                .zip(h.chunks_exact(cols))
                .zip(zbar.chunks_exact_mut(cols))
            {
                activate_row_adjoint(ar, hr, br, self.npts, ng, &self.pairs, &mut scratch);
            }
            abar = zbar;
        }
    }
}

/// Per-point activation derivatives reused across the rows of a layer.
#[derive(Default)]
struct Scratch {
    s1: Vec<f64>,
    s2: Vec<f64>,
    s3: Vec<f64>,
}

impl Scratch {
    /// Fills `s1 = 1 - t^2`, `s2 = -2 t s1` and, when `third`, `s3 = -2 s1^2 + 4 t^2 s1`.
    fn fill(&mut self, t: &[f64], third: bool) {
        self.s1.clear();
        self.s1.extend(t.iter().map(|t| 1.0 - t * t));
        self.s2.clear();
        self.s2.extend(t.iter().zip(&self.s1).map(|(t, s1)| -2.0 * t * s1));
        if third {
            self.s3.clear();
            self.s3
                .extend(t.iter().zip(&self.s1).map(|(t, s1)| -2.0 * s1 * s1 + 4.0 * t * t * s1));
        }
    }
}

/// Borrows channel rows `i` and `j` (distinct) of a channel-major buffer mutably.
fn two_rows(buf: &mut [f64], npts: usize, i: usize, j: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(i < j);
    let (lo, hi) = buf.split_at_mut(j * npts);
    (&mut lo[i * npts..(i + 1) * npts], &mut hi[..npts])
}

/// Applies tanh to one row of pre-activation jets.
fn activate_row(
    a: &[f64],
    h: &mut [f64],
    npts: usize,
    ng: usize,
    pairs: &[(usize, usize)],
    scratch: &mut Scratch,
) {
    let (hv, hrest) = h.split_at_mut(npts);
    for (hv, &av) in hv.iter_mut().zip(&a[..npts]) {
        *hv = tanh(av);
    }
    if ng == 0 {
        return;
    }
    scratch.fill(hv, false);
    let s1 = &scratch.s1;
    let s2 = &scratch.s2;
    let ach = |c: usize| &a[c * npts..(c + 1) * npts];
    let (hg, hh) = hrest.split_at_mut(ng * npts);
    for (i, hgi) in hg.chunks_exact_mut(npts).enumerate() {
        for ((out, &ai), &s) in hgi.iter_mut().zip(ach(1 + i)).zip(s1) {
            *out = s * ai;
        }
    }
    for (k, (&(i, j), hc)) in pairs.iter().zip(hh.chunks_exact_mut(npts)).enumerate() {
        let (ai, aj, ac) = (ach(1 + i), ach(1 + j), ach(1 + ng + k));
        for p in 0..npts {
            hc[p] = s2[p] * ai[p] * aj[p] + s1[p] * ac[p];
        }
    }
}

/// Adjoint of [`activate_row`]: turns output adjoints in `bar` into
/// pre-activation adjoints, in place.
fn activate_row_adjoint(
    a: &[f64],
    h: &[f64],
    bar: &mut [f64],
    npts: usize,
    ng: usize,
    pairs: &[(usize, usize)],
    scratch: &mut Scratch,
) {
    let t = &h[..npts];
    scratch.fill(t, !pairs.is_empty());
    let Scratch { s1, s2, s3 } = &*scratch;
    let ach = |c: usize| &a[c * npts..(c + 1) * npts];
    let (head, hess) = bar.split_at_mut((1 + ng) * npts);
    let (val, grads) = head.split_at_mut(npts);
    for (v, s) in val.iter_mut().zip(s1) {
        *v *= s;
    }
    // Gradient channels: feed the value adjoint, then become the s1-scaled adjoint.
    for (i, gb) in grads.chunks_exact_mut(npts).enumerate() {
        let ai = ach(1 + i);
        for p in 0..npts {
            val[p] += gb[p] * s2[p] * ai[p];
            gb[p] *= s1[p];
        }
    }
    for (k, (&(i, j), hb)) in pairs.iter().zip(hess.chunks_exact_mut(npts)).enumerate() {
        let (ai, aj, ac) = (ach(1 + i), ach(1 + j), ach(1 + ng + k));
        for p in 0..npts {
            val[p] += hb[p] * (s3[p] * ai[p] * aj[p] + s2[p] * ac[p]);
        }
        if i == j {
            let gi = &mut grads[i * npts..(i + 1) * npts];
            for p in 0..npts {
                gi[p] += 2.0 * hb[p] * s2[p] * ai[p];
            }
        } else {
            let (gi, gj) = two_rows(grads, npts, i, j);
            for p in 0..npts {
                let w = hb[p] * s2[p];
                gi[p] += w * aj[p];
                gj[p] += w * ai[p];
            }
        }
        for (v, s) in hb.iter_mut().zip(s1) {
            *v *= s;
        }
    }
}
