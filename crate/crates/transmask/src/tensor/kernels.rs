//! Raw numeric kernels behind the differentiable ops.
//!
//! Everything here operates on flat row-major slices; shape checking is the
//! caller's job. Loops are written so the inner bodies are slice-zip
//! iterations that the compiler can vectorize.

use crate::scalar::{lit, Scalar};

/// c[m,n] += a[m,k] * b[k,n]
pub fn matmul_acc<E: Scalar>(a: &[E], b: &[E], c: &mut [E], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (p, &aip) in a_row.iter().enumerate() {
            if aip == E::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cj, &bj) in c_row.iter_mut().zip(b_row) {
                *cj += aip * bj;
            }
        }
    }
}

pub fn matmul<E: Scalar>(a: &[E], b: &[E], m: usize, k: usize, n: usize) -> Vec<E> {
    let mut c = vec![E::zero(); m * n];
    matmul_acc(a, b, &mut c, m, k, n);
    c
}

pub fn transpose2<E: Scalar>(x: &[E], rows: usize, cols: usize) -> Vec<E> {
    let mut out = vec![E::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

/// Valid cross-correlation output length.
pub fn conv1d_out_len(l: usize, k: usize, stride: usize) -> usize {
    (l - k) / stride + 1
}

/// Lay out conv1d patches: row t holds x[ci, t*stride + j] for all (ci, j).
pub fn im2col_1d<E: Scalar>(x: &[E], cin: usize, l: usize, k: usize, stride: usize) -> Vec<E> {
    let t_out = conv1d_out_len(l, k, stride);
    let mut col = vec![E::zero(); t_out * cin * k];
    for t in 0..t_out {
        let row = &mut col[t * cin * k..(t + 1) * cin * k];
        for ci in 0..cin {
            let src = &x[ci * l + t * stride..ci * l + t * stride + k];
            row[ci * k..(ci + 1) * k].copy_from_slice(src);
        }
    }
    col
}

/// Adjoint of [`im2col_1d`]: scatter-add patch rows back onto the signal.
pub fn col2im_1d<E: Scalar>(col: &[E], cin: usize, l: usize, k: usize, stride: usize) -> Vec<E> {
    let t_out = conv1d_out_len(l, k, stride);
    let mut x = vec![E::zero(); cin * l];
    for t in 0..t_out {
        let row = &col[t * cin * k..(t + 1) * cin * k];
        for ci in 0..cin {
            let dst = &mut x[ci * l + t * stride..ci * l + t * stride + k];
            for (d, &s) in dst.iter_mut().zip(&row[ci * k..(ci + 1) * k]) {
                *d += s;
            }
        }
    }
    x
}

pub fn conv2d_out_dim(d: usize, k: usize, padding: usize) -> usize {
    d + 2 * padding - k + 1
}

/// Patches for 2D cross-correlation with symmetric zero padding.
/// Row (y, x) holds x[ci, y+ky-pad, x+kx-pad] for all (ci, ky, kx).
pub fn im2col_2d<E: Scalar>(
    x: &[E],
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    padding: usize,
) -> Vec<E> {
    let ho = conv2d_out_dim(h, k, padding);
    let wo = conv2d_out_dim(w, k, padding);
    let cols = cin * k * k;
    let mut col = vec![E::zero(); ho * wo * cols];
    for y in 0..ho {
        for xo in 0..wo {
            let row = &mut col[(y * wo + xo) * cols..(y * wo + xo + 1) * cols];
            for ci in 0..cin {
                for ky in 0..k {
                    let sy = (y + ky) as isize - padding as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let sx = (xo + kx) as isize - padding as isize;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        row[(ci * k + ky) * k + kx] = x[(ci * h + sy as usize) * w + sx as usize];
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col_2d`].
pub fn col2im_2d<E: Scalar>(
    col: &[E],
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    padding: usize,
) -> Vec<E> {
    let ho = conv2d_out_dim(h, k, padding);
    let wo = conv2d_out_dim(w, k, padding);
    let cols = cin * k * k;
    let mut x = vec![E::zero(); cin * h * w];
    for y in 0..ho {
        for xo in 0..wo {
            let row = &col[(y * wo + xo) * cols..(y * wo + xo + 1) * cols];
            for ci in 0..cin {
                for ky in 0..k {
                    let sy = (y + ky) as isize - padding as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let sx = (xo + kx) as isize - padding as isize;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        x[(ci * h + sy as usize) * w + sx as usize] += row[(ci * k + ky) * k + kx];
                    }
                }
            }
        }
    }
    x
}

/// out[co, t*stride + j] += x[ci, t] * w[ci, co, j]
pub fn conv_transpose1d<E: Scalar>(
    x: &[E],
    w: &[E],
    cin: usize,
    t_in: usize,
    cout: usize,
    k: usize,
    stride: usize,
) -> Vec<E> {
    let l_out = (t_in - 1) * stride + k;
    let mut out = vec![E::zero(); cout * l_out];
    for ci in 0..cin {
        for t in 0..t_in {
            let xv = x[ci * t_in + t];
            if xv == E::zero() {
                continue;
            }
            for co in 0..cout {
                let w_row = &w[(ci * cout + co) * k..(ci * cout + co + 1) * k];
                let dst = &mut out[co * l_out + t * stride..co * l_out + t * stride + k];
                for (d, &wv) in dst.iter_mut().zip(w_row) {
                    *d += xv * wv;
                }
            }
        }
    }
    out
}

/// Gradients of conv_transpose1d: (d_x, d_w) from upstream grad g[cout, l_out].
#[allow(clippy::too_many_arguments)]
pub fn conv_transpose1d_backward<E: Scalar>(
    x: &[E],
    w: &[E],
    g: &[E],
    cin: usize,
    t_in: usize,
    cout: usize,
    k: usize,
    stride: usize,
) -> (Vec<E>, Vec<E>) {
    let l_out = (t_in - 1) * stride + k;
    let mut dx = vec![E::zero(); cin * t_in];
    let mut dw = vec![E::zero(); cin * cout * k];
    for ci in 0..cin {
        for t in 0..t_in {
            let xv = x[ci * t_in + t];
            let mut acc = E::zero();
            for co in 0..cout {
                let w_row = &w[(ci * cout + co) * k..(ci * cout + co + 1) * k];
                let g_seg = &g[co * l_out + t * stride..co * l_out + t * stride + k];
                for (j, (&wv, &gv)) in w_row.iter().zip(g_seg).enumerate() {
                    acc += wv * gv;
                    dw[(ci * cout + co) * k + j] += xv * gv;
                }
            }
            dx[ci * t_in + t] = acc;
        }
    }
    (dx, dw)
}

/// Softmax along `axis` of a tensor with the given extents.
pub fn softmax<E: Scalar>(x: &[E], shape: &[usize], axis: usize) -> Vec<E> {
    let n = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = vec![E::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |a: usize| (o * n + a) * inner + i;
            let mut max = x[at(0)];
            for a in 1..n {
                if x[at(a)] > max {
                    max = x[at(a)];
                }
            }
            let mut sum = E::zero();
            for a in 0..n {
                let e = (x[at(a)] - max).exp();
                out[at(a)] = e;
                sum += e;
            }
            for a in 0..n {
                out[at(a)] = out[at(a)] / sum;
            }
        }
    }
    out
}

/// VJP of softmax: ds_a = s_a * (g_a - sum_b g_b s_b) per fiber.
pub fn softmax_backward<E: Scalar>(s: &[E], g: &[E], shape: &[usize], axis: usize) -> Vec<E> {
    let n = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut dx = vec![E::zero(); s.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |a: usize| (o * n + a) * inner + i;
            let mut dot = E::zero();
            for a in 0..n {
                dot += g[at(a)] * s[at(a)];
            }
            for a in 0..n {
                dx[at(a)] = s[at(a)] * (g[at(a)] - dot);
            }
        }
    }
    dx
}

/// Per-row normalization over the last axis with affine gain/bias.
pub fn layer_norm<E: Scalar>(x: &[E], d: usize, gain: &[E], bias: &[E], eps: E) -> Vec<E> {
    let rows = x.len() / d;
    let mut out = vec![E::zero(); x.len()];
    let nd = lit::<E>(d as f64);
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mut mean = E::zero();
        for &v in row {
            mean += v;
        }
        mean /= nd;
        let mut var = E::zero();
        for &v in row {
            var += (v - mean) * (v - mean);
        }
        var /= nd;
        let inv_std = (var + eps).sqrt().recip();
        let dst = &mut out[r * d..(r + 1) * d];
        for j in 0..d {
            dst[j] = (row[j] - mean) * inv_std * gain[j] + bias[j];
        }
    }
    out
}

/// VJP of [`layer_norm`]: returns (d_x, d_gain, d_bias).
pub fn layer_norm_backward<E: Scalar>(
    x: &[E],
    d: usize,
    gain: &[E],
    g: &[E],
    eps: E,
) -> (Vec<E>, Vec<E>, Vec<E>) {
    let rows = x.len() / d;
    let nd = lit::<E>(d as f64);
    let mut dx = vec![E::zero(); x.len()];
    let mut dgain = vec![E::zero(); d];
    let mut dbias = vec![E::zero(); d];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let g_row = &g[r * d..(r + 1) * d];
        let mut mean = E::zero();
        for &v in row {
            mean += v;
        }
        mean /= nd;
        let mut var = E::zero();
        for &v in row {
            var += (v - mean) * (v - mean);
        }
        var /= nd;
        let inv_std = (var + eps).sqrt().recip();

        let mut sum_dxh = E::zero();
        let mut sum_dxh_xh = E::zero();
        for j in 0..d {
            let xh = (row[j] - mean) * inv_std;
            let dxh = g_row[j] * gain[j];
            dgain[j] += g_row[j] * xh;
            dbias[j] += g_row[j];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xh;
        }
        let dst = &mut dx[r * d..(r + 1) * d];
        for j in 0..d {
            let xh = (row[j] - mean) * inv_std;
            let dxh = g_row[j] * gain[j];
            dst[j] = inv_std * (dxh - sum_dxh / nd - xh * sum_dxh_xh / nd);
        }
    }
    (dx, dgain, dbias)
}

/// Normalize over every element of [C, H, W] with per-channel affine.
pub fn global_layer_norm<E: Scalar>(
    x: &[E],
    c: usize,
    hw: usize,
    gain: &[E],
    bias: &[E],
    eps: E,
) -> Vec<E> {
    let n = lit::<E>((c * hw) as f64);
    let mut mean = E::zero();
    for &v in x {
        mean += v;
    }
    mean /= n;
    let mut var = E::zero();
    for &v in x {
        var += (v - mean) * (v - mean);
    }
    var /= n;
    let inv_std = (var + eps).sqrt().recip();
    let mut out = vec![E::zero(); x.len()];
    for ch in 0..c {
        let (gch, bch) = (gain[ch], bias[ch]);
        let src = &x[ch * hw..(ch + 1) * hw];
        let dst = &mut out[ch * hw..(ch + 1) * hw];
        for (o, &v) in dst.iter_mut().zip(src) {
            *o = (v - mean) * inv_std * gch + bch;
        }
    }
    out
}

/// VJP of [`global_layer_norm`]: returns (d_x, d_gain, d_bias).
pub fn global_layer_norm_backward<E: Scalar>(
    x: &[E],
    c: usize,
    hw: usize,
    gain: &[E],
    g: &[E],
    eps: E,
) -> (Vec<E>, Vec<E>, Vec<E>) {
    let n_el = c * hw;
    let n = lit::<E>(n_el as f64);
    let mut mean = E::zero();
    for &v in x {
        mean += v;
    }
    mean /= n;
    let mut var = E::zero();
    for &v in x {
        var += (v - mean) * (v - mean);
    }
    var /= n;
    let inv_std = (var + eps).sqrt().recip();

    let mut dgain = vec![E::zero(); c];
    let mut dbias = vec![E::zero(); c];
    let mut sum_dxh = E::zero();
    let mut sum_dxh_xh = E::zero();
    for ch in 0..c {
        for i in 0..hw {
            let idx = ch * hw + i;
            let xh = (x[idx] - mean) * inv_std;
            let dxh = g[idx] * gain[ch];
            dgain[ch] += g[idx] * xh;
            dbias[ch] += g[idx];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xh;
        }
    }
    let mut dx = vec![E::zero(); n_el];
    for (ch, &gch) in gain.iter().enumerate() {
        for i in 0..hw {
            let idx = ch * hw + i;
            let xh = (x[idx] - mean) * inv_std;
            let dxh = g[idx] * gch;
            dx[idx] = inv_std * (dxh - sum_dxh / n - xh * sum_dxh_xh / n);
        }
    }
    (dx, dgain, dbias)
}

/// Padded length for chunking: smallest L' >= max(L, 2*hop) with L' % hop == 0.
pub fn padded_len(l: usize, hop: usize) -> usize {
    let min = l.max(2 * hop);
    min.div_ceil(hop) * hop
}

/// Number of 50%-overlapping chunks covering the padded sequence.
pub fn chunk_count(l: usize, hop: usize) -> usize {
    padded_len(l, hop) / hop - 1
}

/// Gather [D, L] into overlapping chunks [D, 2*hop, S]; missing frames are zero.
pub fn segment<E: Scalar>(x: &[E], d: usize, l: usize, hop: usize) -> Vec<E> {
    let s_cnt = chunk_count(l, hop);
    let width = 2 * hop;
    let mut out = vec![E::zero(); d * width * s_cnt];
    for ch in 0..d {
        for t in 0..width {
            for s in 0..s_cnt {
                let f = s * hop + t;
                if f < l {
                    out[(ch * width + t) * s_cnt + s] = x[ch * l + f];
                }
            }
        }
    }
    out
}

/// Adjoint of [`segment`]: scatter-add chunk frames back to the sequence.
pub fn segment_backward<E: Scalar>(g: &[E], d: usize, l: usize, hop: usize) -> Vec<E> {
    let s_cnt = chunk_count(l, hop);
    let width = 2 * hop;
    let mut dx = vec![E::zero(); d * l];
    for ch in 0..d {
        for t in 0..width {
            for s in 0..s_cnt {
                let f = s * hop + t;
                if f < l {
                    dx[ch * l + f] += g[(ch * width + t) * s_cnt + s];
                }
            }
        }
    }
    dx
}

/// How many chunks contain padded frame `f`; always 1 or 2.
pub fn coverage(f: usize, hop: usize, s_cnt: usize) -> usize {
    let hi = f / hop; // candidate chunk indices: hi and hi-1
    let mut count = 0;
    if hi < s_cnt {
        count += 1;
    }
    if hi >= 1 && hi - 1 < s_cnt && f < (hi - 1) * hop + 2 * hop {
        count += 1;
    }
    count
}

/// Coverage-normalized overlap-add of [D, 2*hop, S] chunks, truncated to `out_len`.
pub fn overlap_add<E: Scalar>(
    chunks: &[E],
    d: usize,
    width: usize,
    s_cnt: usize,
    hop: usize,
    out_len: usize,
) -> Vec<E> {
    let mut out = vec![E::zero(); d * out_len];
    for ch in 0..d {
        for t in 0..width {
            for s in 0..s_cnt {
                let f = s * hop + t;
                if f < out_len {
                    out[ch * out_len + f] += chunks[(ch * width + t) * s_cnt + s];
                }
            }
        }
        for f in 0..out_len {
            let cov = coverage(f, hop, s_cnt);
            debug_assert!(cov == 1 || cov == 2, "chunk coverage must be 1 or 2");
            out[ch * out_len + f] /= lit::<E>(cov as f64);
        }
    }
    out
}

/// Adjoint of [`overlap_add`].
pub fn overlap_add_backward<E: Scalar>(
    g: &[E],
    d: usize,
    width: usize,
    s_cnt: usize,
    hop: usize,
    out_len: usize,
) -> Vec<E> {
    let mut dc = vec![E::zero(); d * width * s_cnt];
    for ch in 0..d {
        for t in 0..width {
            for s in 0..s_cnt {
                let f = s * hop + t;
                if f < out_len {
                    let cov = lit::<E>(coverage(f, hop, s_cnt) as f64);
                    dc[(ch * width + t) * s_cnt + s] = g[ch * out_len + f] / cov;
                }
            }
        }
    }
    dc
}
