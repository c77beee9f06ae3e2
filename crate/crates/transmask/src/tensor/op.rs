//! Operation records and their vector-Jacobian products.

use super::kernels;
use super::Tensor;
use crate::scalar::{lit, Scalar};

pub(crate) enum Op<E: Scalar> {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale(E),
    Sigmoid,
    Tanh,
    Relu,
    Gelu,
    Ln,
    Matmul,
    Transpose2,
    AddBias,
    AddChanBias,
    LayerNorm { eps: E },
    GlobalLayerNorm { eps: E },
    Softmax { axis: usize },
    SumAll,
    MeanAll,
    Reshape,
    Permute3 { perm: [usize; 3] },
    Index0 { index: usize },
    Stack0,
    ConcatLast,
    ConcatAxis1,
    SliceCols { lo: usize, hi: usize },
    SliceAxis1 { lo: usize, hi: usize },
    Conv1d { stride: usize },
    ConvTranspose1d { stride: usize },
    Conv2d { padding: usize },
    Segment { hop: usize },
    OverlapAdd { hop: usize, out_len: usize },
}

pub(crate) fn apply_permute3<E: Scalar>(x: &[E], shape: &[usize], perm: [usize; 3]) -> Vec<E> {
    let out_shape = [shape[perm[0]], shape[perm[1]], shape[perm[2]]];
    let strides = [shape[1] * shape[2], shape[2], 1];
    let mut out = vec![E::zero(); x.len()];
    let mut idx = 0;
    for j0 in 0..out_shape[0] {
        for j1 in 0..out_shape[1] {
            for j2 in 0..out_shape[2] {
                out[idx] = x[j0 * strides[perm[0]] + j1 * strides[perm[1]] + j2 * strides[perm[2]]];
                idx += 1;
            }
        }
    }
    out
}

fn invert_perm(perm: [usize; 3]) -> [usize; 3] {
    let mut inv = [0usize; 3];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Value of a possibly-scalar operand at flat index `i`.
#[inline]
fn bval<E: Scalar>(t: &Tensor<E>, i: usize) -> E {
    let d = t.data();
    if d.len() == 1 {
        d[0]
    } else {
        d[i]
    }
}

/// Collapses a full-size contribution onto a scalar operand if needed.
fn fit<E: Scalar>(contrib: Vec<E>, parent: &Tensor<E>) -> Vec<E> {
    if contrib.len() == parent.numel() {
        contrib
    } else {
        let mut s = E::zero();
        for &v in &contrib {
            s += v;
        }
        vec![s]
    }
}

impl<E: Scalar> Op<E> {
    /// Pushes each parent's gradient contribution through `add(parent_idx, grad)`.
    pub(crate) fn backward(
        &self,
        out: &Tensor<E>,
        parents: &[Tensor<E>],
        grad: &[E],
        add: &mut dyn FnMut(usize, Vec<E>),
    ) {
        match self {
            Op::Add => {
                add(0, fit(grad.to_vec(), &parents[0]));
                add(1, fit(grad.to_vec(), &parents[1]));
            }
            Op::Sub => {
                add(0, fit(grad.to_vec(), &parents[0]));
                add(1, fit(grad.iter().map(|&g| -g).collect(), &parents[1]));
            }
            Op::Mul => {
                let (a, b) = (&parents[0], &parents[1]);
                let da: Vec<E> = grad
                    .iter()
                    .enumerate()
                    .map(|(i, &g)| g * bval(b, i))
                    .collect();
                let db: Vec<E> = grad
                    .iter()
                    .enumerate()
                    .map(|(i, &g)| g * bval(a, i))
                    .collect();
                add(0, fit(da, a));
                add(1, fit(db, b));
            }
            Op::Div => {
                let (a, b) = (&parents[0], &parents[1]);
                let da: Vec<E> = grad
                    .iter()
                    .enumerate()
                    .map(|(i, &g)| g / bval(b, i))
                    .collect();
                let db: Vec<E> = grad
                    .iter()
                    .enumerate()
                    .map(|(i, &g)| {
                        let bv = bval(b, i);
                        -g * bval(a, i) / (bv * bv)
                    })
                    .collect();
                add(0, fit(da, a));
                add(1, fit(db, b));
            }
            Op::Neg => add(0, grad.iter().map(|&g| -g).collect()),
            Op::Scale(c) => add(0, grad.iter().map(|&g| g * *c).collect()),
            Op::Sigmoid => {
                let s = out.data();
                add(
                    0,
                    grad.iter()
                        .zip(s)
                        .map(|(&g, &sv)| g * sv * (E::one() - sv))
                        .collect(),
                );
            }
            Op::Tanh => {
                let t = out.data();
                add(
                    0,
                    grad.iter()
                        .zip(t)
                        .map(|(&g, &tv)| g * (E::one() - tv * tv))
                        .collect(),
                );
            }
            Op::Relu => {
                let x = parents[0].data();
                add(
                    0,
                    grad.iter()
                        .zip(x)
                        .map(|(&g, &xv)| if xv > E::zero() { g } else { E::zero() })
                        .collect(),
                );
            }
            Op::Gelu => {
                let c: E = lit((2.0 / std::f64::consts::PI).sqrt());
                let a3: E = lit(0.044715);
                let half: E = lit(0.5);
                let three: E = lit(3.0);
                let x = parents[0].data();
                add(
                    0,
                    grad.iter()
                        .zip(x)
                        .map(|(&g, &xv)| {
                            let inner = c * (xv + a3 * xv * xv * xv);
                            let t = inner.tanh();
                            let sech2 = E::one() - t * t;
                            let d_inner = c * (E::one() + three * a3 * xv * xv);
                            g * (half * (E::one() + t) + half * xv * sech2 * d_inner)
                        })
                        .collect(),
                );
            }
            Op::Ln => {
                let x = parents[0].data();
                add(0, grad.iter().zip(x).map(|(&g, &xv)| g / xv).collect());
            }
            Op::Matmul => {
                let (a, b) = (&parents[0], &parents[1]);
                let (m, k) = (a.shape()[0], a.shape()[1]);
                let n = b.shape()[1];
                let bt = kernels::transpose2(b.data(), k, n);
                let da = kernels::matmul(grad, &bt, m, n, k);
                let at = kernels::transpose2(a.data(), m, k);
                let db = kernels::matmul(&at, grad, k, m, n);
                add(0, da);
                add(1, db);
            }
            Op::Transpose2 => {
                let (r, c) = (out.shape()[0], out.shape()[1]);
                add(0, kernels::transpose2(grad, r, c));
            }
            Op::AddBias => {
                let d = *parents[1].shape().last().unwrap();
                let mut db = vec![E::zero(); d];
                for row in grad.chunks_exact(d) {
                    for (acc, &g) in db.iter_mut().zip(row) {
                        *acc += g;
                    }
                }
                add(0, grad.to_vec());
                add(1, db);
            }
            Op::AddChanBias => {
                let c = parents[1].numel();
                let hw = grad.len() / c;
                let mut db = vec![E::zero(); c];
                for (ch, acc) in db.iter_mut().enumerate() {
                    for &g in &grad[ch * hw..(ch + 1) * hw] {
                        *acc += g;
                    }
                }
                add(0, grad.to_vec());
                add(1, db);
            }
            Op::LayerNorm { eps } => {
                let d = parents[1].numel();
                let (dx, dgain, dbias) = kernels::layer_norm_backward(
                    parents[0].data(),
                    d,
                    parents[1].data(),
                    grad,
                    *eps,
                );
                add(0, dx);
                add(1, dgain);
                add(2, dbias);
            }
            Op::GlobalLayerNorm { eps } => {
                let c = parents[1].numel();
                let hw = parents[0].numel() / c;
                let (dx, dgain, dbias) = kernels::global_layer_norm_backward(
                    parents[0].data(),
                    c,
                    hw,
                    parents[1].data(),
                    grad,
                    *eps,
                );
                add(0, dx);
                add(1, dgain);
                add(2, dbias);
            }
            Op::Softmax { axis } => {
                add(
                    0,
                    kernels::softmax_backward(out.data(), grad, out.shape(), *axis),
                );
            }
            Op::SumAll => add(0, vec![grad[0]; parents[0].numel()]),
            Op::MeanAll => {
                let n: E = lit(parents[0].numel() as f64);
                add(0, vec![grad[0] / n; parents[0].numel()]);
            }
            Op::Reshape => add(0, grad.to_vec()),
            Op::Permute3 { perm } => {
                add(0, apply_permute3(grad, out.shape(), invert_perm(*perm)));
            }
            Op::Index0 { index } => {
                let parent = &parents[0];
                let block = parent.numel() / parent.shape()[0];
                let mut dx = vec![E::zero(); parent.numel()];
                dx[index * block..(index + 1) * block].copy_from_slice(grad);
                add(0, dx);
            }
            Op::Stack0 => {
                let block = parents[0].numel();
                for (i, _) in parents.iter().enumerate() {
                    add(i, grad[i * block..(i + 1) * block].to_vec());
                }
            }
            Op::ConcatLast => {
                let total = *out.shape().last().unwrap();
                let rows = out.numel() / total;
                let mut offset = 0;
                for (i, p) in parents.iter().enumerate() {
                    let w = *p.shape().last().unwrap();
                    let mut dp = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        dp.extend_from_slice(&grad[r * total + offset..r * total + offset + w]);
                    }
                    add(i, dp);
                    offset += w;
                }
            }
            Op::ConcatAxis1 => {
                let (a, c) = (out.shape()[0], out.shape()[2]);
                let total = out.shape()[1];
                let mut offset = 0;
                for (i, p) in parents.iter().enumerate() {
                    let w = p.shape()[1];
                    let mut dp = Vec::with_capacity(a * w * c);
                    for slab in 0..a {
                        let base = (slab * total + offset) * c;
                        dp.extend_from_slice(&grad[base..base + w * c]);
                    }
                    add(i, dp);
                    offset += w;
                }
            }
            Op::SliceCols { lo, hi } => {
                let (r, c) = (parents[0].shape()[0], parents[0].shape()[1]);
                let w = hi - lo;
                let mut dx = vec![E::zero(); r * c];
                for row in 0..r {
                    dx[row * c + lo..row * c + hi].copy_from_slice(&grad[row * w..(row + 1) * w]);
                }
                add(0, dx);
            }
            Op::SliceAxis1 { lo, hi } => {
                let (a, b, c) = (
                    parents[0].shape()[0],
                    parents[0].shape()[1],
                    parents[0].shape()[2],
                );
                let w = hi - lo;
                let mut dx = vec![E::zero(); a * b * c];
                for slab in 0..a {
                    dx[(slab * b + lo) * c..(slab * b + hi) * c]
                        .copy_from_slice(&grad[slab * w * c..(slab + 1) * w * c]);
                }
                add(0, dx);
            }
            Op::Conv1d { stride } => {
                let (x, w) = (&parents[0], &parents[1]);
                let (cin, l) = (x.shape()[0], x.shape()[1]);
                let (cout, k) = (w.shape()[0], w.shape()[2]);
                let t_out = kernels::conv1d_out_len(l, k, *stride);
                let g_tc = kernels::transpose2(grad, cout, t_out);
                let d_col = kernels::matmul(&g_tc, w.data(), t_out, cout, cin * k);
                let dx = kernels::col2im_1d(&d_col, cin, l, k, *stride);
                let col = kernels::im2col_1d(x.data(), cin, l, k, *stride);
                let col_t = kernels::transpose2(&col, t_out, cin * k);
                let dwt = kernels::matmul(&col_t, &g_tc, cin * k, t_out, cout);
                let dw = kernels::transpose2(&dwt, cin * k, cout);
                add(0, dx);
                add(1, dw);
            }
            Op::ConvTranspose1d { stride } => {
                let (x, w) = (&parents[0], &parents[1]);
                let (cin, t_in) = (x.shape()[0], x.shape()[1]);
                let (cout, k) = (w.shape()[1], w.shape()[2]);
                let (dx, dw) = kernels::conv_transpose1d_backward(
                    x.data(),
                    w.data(),
                    grad,
                    cin,
                    t_in,
                    cout,
                    k,
                    *stride,
                );
                add(0, dx);
                add(1, dw);
            }
            Op::Conv2d { padding } => {
                let (x, w) = (&parents[0], &parents[1]);
                let (cin, h, wid) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let (cout, k) = (w.shape()[0], w.shape()[2]);
                let ho = kernels::conv2d_out_dim(h, k, *padding);
                let wo = kernels::conv2d_out_dim(wid, k, *padding);
                let g_pc = kernels::transpose2(grad, cout, ho * wo);
                let d_col = kernels::matmul(&g_pc, w.data(), ho * wo, cout, cin * k * k);
                let dx = kernels::col2im_2d(&d_col, cin, h, wid, k, *padding);
                let col = kernels::im2col_2d(x.data(), cin, h, wid, k, *padding);
                let col_t = kernels::transpose2(&col, ho * wo, cin * k * k);
                let dwt = kernels::matmul(&col_t, &g_pc, cin * k * k, ho * wo, cout);
                let dw = kernels::transpose2(&dwt, cin * k * k, cout);
                add(0, dx);
                add(1, dw);
            }
            Op::Segment { hop } => {
                let (d, l) = (parents[0].shape()[0], parents[0].shape()[1]);
                add(0, kernels::segment_backward(grad, d, l, *hop));
            }
            Op::OverlapAdd { hop, out_len } => {
                let (d, width, s_cnt) = (
                    parents[0].shape()[0],
                    parents[0].shape()[1],
                    parents[0].shape()[2],
                );
                add(
                    0,
                    kernels::overlap_add_backward(grad, d, width, s_cnt, *hop, *out_len),
                );
            }
        }
    }
}
