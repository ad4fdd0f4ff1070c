//! Forward kernels and the matching vector-Jacobian products.
//!
//! Everything here is a pure function of its arguments. The autodiff graph in
//! [`crate::graph`] records which kernel ran and calls the `*_backward`
//! counterpart during the reverse sweep.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolMode {
    Avg,
    Max,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_K * (x + GELU_C * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

fn conv_out(len: usize, k: usize, stride: usize, padding: usize) -> usize {
    (len + 2 * padding - k) / stride + 1
}

/// Validates conv arguments and returns `(c_in, h, w, c_out, k, h_out, w_out)`.
fn conv_dims(input: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize, padding: usize) -> Result<[usize; 7]> {
    let (is, ws) = (input.shape(), weight.shape());
    if is.len() != 3 {
        return Err(Error::dim("conv2d", format!("input must be [C,H,W], got {is:?}")));
    }
    if ws.len() != 4 || ws[2] != ws[3] {
        return Err(Error::dim("conv2d", format!("weight must be [Co,Ci,k,k], got {ws:?}")));
    }
    let (c_in, h, w) = (is[0], is[1], is[2]);
    let (c_out, k) = (ws[0], ws[2]);
    if ws[1] != c_in {
        return Err(Error::dim("conv2d", format!("weight expects {} input channels, input has {c_in}", ws[1])));
    }
    if k != 1 && k != 3 {
        return Err(Error::dim("conv2d", format!("kernel size {k} not in {{1,3}}")));
    }
    if bias.shape() != [c_out] {
        return Err(Error::dim("conv2d", format!("bias {:?} for {c_out} output channels", bias.shape())));
    }
    if stride == 0 || h + 2 * padding < k || w + 2 * padding < k {
        return Err(Error::dim("conv2d", format!("stride {stride}, padding {padding} invalid for {h}x{w} with k={k}")));
    }
    Ok([c_in, h, w, c_out, k, conv_out(h, k, stride, padding), conv_out(w, k, stride, padding)])
}

/// Patch matrix `[H_out·W_out, C_in·k·k]` with zeros at padded taps.
fn im2col(x: &[f64], dims: [usize; 7], stride: usize, padding: usize) -> Vec<f64> {
    let [c_in, h, w, _, k, ho, wo] = dims;
    let kk = c_in * k * k;
    let mut cols = vec![0.0; ho * wo * kk];
    for ci in 0..c_in {
        let xin = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            let (y0, y1) = valid_range(ho, h, ky, stride, padding);
            for kx in 0..k {
                let (x0, x1) = valid_range(wo, w, kx, stride, padding);
                let col = (ci * k + ky) * k + kx;
                for oy in y0..y1 {
                    let iy = oy * stride + ky - padding;
                    for ox in x0..x1 {
                        let ix = ox * stride + kx - padding;
                        cols[(oy * wo + ox) * kk + col] = xin[iy * w + ix];
                    }
                }
            }
        }
    }
    cols
}

/// Scatters patch-matrix gradients back onto the `[C_in,H,W]` input.
fn col2im(cols: &[f64], dims: [usize; 7], stride: usize, padding: usize) -> Vec<f64> {
    let [c_in, h, w, _, k, ho, wo] = dims;
    let kk = c_in * k * k;
    let mut x = vec![0.0; c_in * h * w];
    for ci in 0..c_in {
        let xin = &mut x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            let (y0, y1) = valid_range(ho, h, ky, stride, padding);
            for kx in 0..k {
                let (x0, x1) = valid_range(wo, w, kx, stride, padding);
                let col = (ci * k + ky) * k + kx;
                for oy in y0..y1 {
                    let iy = oy * stride + ky - padding;
                    for ox in x0..x1 {
                        let ix = ox * stride + kx - padding;
                        xin[iy * w + ix] += cols[(oy * wo + ox) * kk + col];
                    }
                }
            }
        }
    }
    x
}

/// Zero-padded 2-D cross-correlation of a `[C_in,H,W]` input.
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let dims = conv_dims(input, weight, bias, stride, padding)?;
    let [c_in, _, _, c_out, k, ho, wo] = dims;
    let (wt, b) = (weight.data(), bias.data());
    let kk = c_in * k * k;
    let p = ho * wo;
    let cols = im2col(input.data(), dims, stride, padding);
    let mut out = vec![0.0; c_out * p];
    for co in 0..c_out {
        let wr = &wt[co * kk..(co + 1) * kk];
        for (j, o) in out[co * p..(co + 1) * p].iter_mut().enumerate() {
            *o = b[co] + dot(wr, &cols[j * kk..(j + 1) * kk]);
        }
    }
    Ok(Tensor::from_parts(vec![c_out, ho, wo], out))
}

/// Returns gradients for `(input, weight, bias)`.
pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    padding: usize,
) -> (Tensor, Tensor, Tensor) {
    let (is, ws) = (input.shape(), weight.shape());
    let (c_in, h, w) = (is[0], is[1], is[2]);
    let (c_out, k) = (ws[0], ws[2]);
    let (ho, wo) = (grad_out.shape()[1], grad_out.shape()[2]);
    let dims = [c_in, h, w, c_out, k, ho, wo];
    let kk = c_in * k * k;
    let p = ho * wo;
    let (wt, g) = (weight.data(), grad_out.data());
    let cols = im2col(input.data(), dims, stride, padding);
    let mut gcols = vec![0.0; p * kk];
    let mut gw = vec![0.0; wt.len()];
    let mut gb = vec![0.0; c_out];
    for co in 0..c_out {
        let gplane = &g[co * p..(co + 1) * p];
        gb[co] = gplane.iter().sum();
        let wr = &wt[co * kk..(co + 1) * kk];
        let gwr = &mut gw[co * kk..(co + 1) * kk];
        for (j, &gv) in gplane.iter().enumerate() {
            if gv == 0.0 {
                continue;
            }
            let cr = &cols[j * kk..(j + 1) * kk];
            let gcr = &mut gcols[j * kk..(j + 1) * kk];
            for i in 0..kk {
                gwr[i] += gv * cr[i];
                gcr[i] += gv * wr[i];
            }
        }
    }
    (
        Tensor::from_parts(is.to_vec(), col2im(&gcols, dims, stride, padding)),
        Tensor::from_parts(ws.to_vec(), gw),
        Tensor::from_parts(vec![c_out], gb),
    )
}

/// `out = input · weightᵀ + bias` over the trailing dimension.
pub fn linear(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let ws = weight.shape();
    if ws.len() != 2 {
        return Err(Error::dim("linear", format!("weight must be [Do,Di], got {ws:?}")));
    }
    let (d_out, d_in) = (ws[0], ws[1]);
    let d = *input.shape().last().unwrap_or(&0);
    if d != d_in {
        return Err(Error::dim("linear", format!("input trailing dim {d} vs weight input dim {d_in}")));
    }
    if bias.shape() != [d_out] {
        return Err(Error::dim("linear", format!("bias {:?} for {d_out} outputs", bias.shape())));
    }
    let rows = input.len() / d_in;
    let (x, wt, b) = (input.data(), weight.data(), bias.data());
    let mut out = vec![0.0; rows * d_out];
    for o in 0..d_out {
        let wr = &wt[o * d_in..(o + 1) * d_in];
        for r in 0..rows {
            out[r * d_out + o] = b[o] + dot(&x[r * d_in..(r + 1) * d_in], wr);
        }
    }
    let mut shape = input.shape().to_vec();
    *shape.last_mut().unwrap() = d_out;
    Ok(Tensor::from_parts(shape, out))
}

pub fn linear_backward(input: &Tensor, weight: &Tensor, grad_out: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (d_out, d_in) = (weight.shape()[0], weight.shape()[1]);
    let rows = input.len() / d_in;
    let (x, wt, g) = (input.data(), weight.data(), grad_out.data());
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; wt.len()];
    let mut gb = vec![0.0; d_out];
    for r in 0..rows {
        let xr = &x[r * d_in..(r + 1) * d_in];
        let gxr = &mut gx[r * d_in..(r + 1) * d_in];
        for o in 0..d_out {
            let gv = g[r * d_out + o];
            if gv == 0.0 {
                continue;
            }
            gb[o] += gv;
            let wr = &wt[o * d_in..(o + 1) * d_in];
            let gwr = &mut gw[o * d_in..(o + 1) * d_in];
            for i in 0..d_in {
                gxr[i] += gv * wr[i];
                gwr[i] += gv * xr[i];
            }
        }
    }
    (
        Tensor::from_parts(input.shape().to_vec(), gx),
        Tensor::from_parts(weight.shape().to_vec(), gw),
        Tensor::from_parts(vec![d_out], gb),
    )
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Output indices `lo..hi` along one axis whose input tap `o * stride + tap - padding`
/// lands inside `0..len`.
fn valid_range(out_len: usize, len: usize, tap: usize, stride: usize, padding: usize) -> (usize, usize) {
    let lo = padding.saturating_sub(tap).div_ceil(stride);
    let hi = if len + padding > tap { ((len + padding - tap - 1) / stride + 1).min(out_len) } else { 0 };
    (lo, hi.max(lo))
}

fn matmul_dims(a: &Tensor, b: &Tensor, trans_b: bool) -> Result<(usize, usize, usize)> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(Error::dim("matmul", format!("rank-2 operands required, got {:?} and {:?}", a.shape(), b.shape())));
    }
    let (n, k) = (a.shape()[0], a.shape()[1]);
    let (kb, m) = if trans_b { (b.shape()[1], b.shape()[0]) } else { (b.shape()[0], b.shape()[1]) };
    if k != kb {
        return Err(Error::dim(
            "matmul",
            format!("inner dims {k} vs {kb} ({:?} x {:?}, trans_b={trans_b})", a.shape(), b.shape()),
        ));
    }
    Ok((n, k, m))
}

/// `a · b` or `a · bᵀ`.
pub fn matmul(a: &Tensor, b: &Tensor, trans_b: bool) -> Result<Tensor> {
    let (n, k, m) = matmul_dims(a, b, trans_b)?;
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let ar = &ad[i * k..(i + 1) * k];
        let orow = &mut out[i * m..(i + 1) * m];
        if trans_b {
            for (j, o) in orow.iter_mut().enumerate() {
                *o = dot(ar, &bd[j * k..(j + 1) * k]);
            }
        } else {
            for (p, &av) in ar.iter().enumerate() {
                let br = &bd[p * m..(p + 1) * m];
                for (o, &bv) in orow.iter_mut().zip(br) {
                    *o += av * bv;
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, m], out))
}

pub fn matmul_backward(a: &Tensor, b: &Tensor, trans_b: bool, grad_out: &Tensor) -> (Tensor, Tensor) {
    // out = a·b   : ga = g·bᵀ, gb = aᵀ·g
    // out = a·bᵀ  : ga = g·b,  gb = gᵀ·a
    let ga = matmul(grad_out, b, !trans_b).expect("matmul backward shapes");
    let at = a.transpose2().expect("rank-2");
    let gb =
        if trans_b { matmul(&grad_out.transpose2().expect("rank-2"), a, false) } else { matmul(&at, grad_out, false) }
            .expect("matmul backward shapes");
    (ga, gb)
}

/// Per-row layer normalization of an `[N,C]` tensor with biased variance.
/// Also returns the per-row `(mean, 1/sqrt(var+eps))` needed for backward.
pub fn layer_norm_with_stats(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<(Tensor, Vec<(f64, f64)>)> {
    if input.rank() != 2 {
        return Err(Error::dim("layer_norm", format!("input must be [N,C], got {:?}", input.shape())));
    }
    let c = input.shape()[1];
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::dim(
            "layer_norm",
            format!("gamma {:?} / beta {:?} for width {c}", gamma.shape(), beta.shape()),
        ));
    }
    if !(eps > 0.0) {
        return Err(Error::Invalid(format!("layer_norm eps must be positive, got {eps}")));
    }
    let (x, gm, bt) = (input.data(), gamma.data(), beta.data());
    let mut out = Vec::with_capacity(x.len());
    let mut stats = Vec::with_capacity(input.shape()[0]);
    for row in x.chunks(c) {
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let rstd = 1.0 / (var + eps).sqrt();
        out.extend(row.iter().enumerate().map(|(i, v)| (v - mean) * rstd * gm[i] + bt[i]));
        stats.push((mean, rstd));
    }
    Ok((Tensor::from_parts(input.shape().to_vec(), out), stats))
}

pub fn layer_norm(input: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    layer_norm_with_stats(input, gamma, beta, eps).map(|(t, _)| t)
}

pub fn layer_norm_backward(
    input: &Tensor,
    gamma: &Tensor,
    stats: &[(f64, f64)],
    grad_out: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let c = input.shape()[1];
    let (x, gm, g) = (input.data(), gamma.data(), grad_out.data());
    let mut gx = vec![0.0; x.len()];
    let mut gg = vec![0.0; c];
    let mut gbeta = vec![0.0; c];
    let mut xhat = vec![0.0; c];
    let mut dxhat = vec![0.0; c];
    for (r, &(mean, rstd)) in stats.iter().enumerate() {
        let xr = &x[r * c..(r + 1) * c];
        let gr = &g[r * c..(r + 1) * c];
        for i in 0..c {
            xhat[i] = (xr[i] - mean) * rstd;
            dxhat[i] = gr[i] * gm[i];
            gg[i] += gr[i] * xhat[i];
            gbeta[i] += gr[i];
        }
        let m1 = dxhat.iter().sum::<f64>() / c as f64;
        let m2 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / c as f64;
        for i in 0..c {
            gx[r * c + i] = rstd * (dxhat[i] - m1 - xhat[i] * m2);
        }
    }
    (
        Tensor::from_parts(input.shape().to_vec(), gx),
        Tensor::from_parts(vec![c], gg),
        Tensor::from_parts(vec![c], gbeta),
    )
}

/// Row-wise softmax of an `[N,M]` tensor with max subtraction.
pub fn softmax_rows(input: &Tensor) -> Result<Tensor> {
    if input.rank() != 2 {
        return Err(Error::dim("softmax_rows", format!("input must be [N,M], got {:?}", input.shape())));
    }
    let m = input.shape()[1];
    let mut out = Vec::with_capacity(input.len());
    for row in input.data().chunks(m) {
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        out.extend(row.iter().map(|v| (v - mx).exp()));
        let z: f64 = out[start..].iter().sum();
        out[start..].iter_mut().for_each(|v| *v /= z);
    }
    Ok(Tensor::from_parts(input.shape().to_vec(), out))
}

pub fn softmax_rows_backward(output: &Tensor, grad_out: &Tensor) -> Tensor {
    let m = output.shape()[1];
    let mut gx = Vec::with_capacity(output.len());
    for (y, g) in output.data().chunks(m).zip(grad_out.data().chunks(m)) {
        let s: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
        gx.extend(y.iter().zip(g).map(|(yv, gv)| yv * (gv - s)));
    }
    Tensor::from_parts(output.shape().to_vec(), gx)
}

/// Start (inclusive) and end (exclusive) of adaptive bin `i` of `out` over length `len`.
pub fn adaptive_bin(i: usize, len: usize, out: usize) -> (usize, usize) {
    ((i * len) / out, ((i + 1) * len).div_ceil(out))
}

/// Adaptive pooling over the trailing two dims of `[C,H,W]` (target `[oh, ow]`)
/// or the trailing dim of `[N,L]` (target `[ol]`).
///
/// Returns the pooled tensor and, for max mode, the flat input index chosen
/// for each output element (first maximum wins on ties).
pub fn adaptive_pool_with_index(input: &Tensor, mode: PoolMode, out_size: &[usize]) -> Result<(Tensor, Vec<usize>)> {
    let (outer, h, w, oh, ow) = match (input.shape(), out_size) {
        (&[c, h, w], &[oh, ow]) => (c, h, w, oh, ow),
        (&[n, l], &[ol]) => (n, 1, l, 1, ol),
        (s, o) => return Err(Error::dim("adaptive_pool", format!("target {o:?} does not match input rank of {s:?}"))),
    };
    if oh == 0 || ow == 0 {
        return Err(Error::Invalid("adaptive_pool target size must be positive".into()));
    }
    if oh > h || ow > w {
        return Err(Error::dim("adaptive_pool", format!("target {out_size:?} larger than input {:?}", input.shape())));
    }
    let x = input.data();
    let mut out = Vec::with_capacity(outer * oh * ow);
    let mut index = Vec::new();
    for o in 0..outer {
        for i in 0..oh {
            let (y0, y1) = adaptive_bin(i, h, oh);
            for j in 0..ow {
                let (x0, x1) = adaptive_bin(j, w, ow);
                match mode {
                    PoolMode::Avg => {
                        let mut s = 0.0;
                        for y in y0..y1 {
                            for xx in x0..x1 {
                                s += x[(o * h + y) * w + xx];
                            }
                        }
                        out.push(s / ((y1 - y0) * (x1 - x0)) as f64);
                    }
                    PoolMode::Max => {
                        let mut best = (f64::NEG_INFINITY, 0);
                        for y in y0..y1 {
                            for xx in x0..x1 {
                                let idx = (o * h + y) * w + xx;
                                if x[idx] > best.0 {
                                    best = (x[idx], idx);
                                }
                            }
                        }
                        out.push(best.0);
                        index.push(best.1);
                    }
                }
            }
        }
    }
    let shape = if input.rank() == 3 { vec![outer, oh, ow] } else { vec![outer, ow] };
    Ok((Tensor::from_parts(shape, out), index))
}

pub fn adaptive_pool(input: &Tensor, mode: PoolMode, out_size: &[usize]) -> Result<Tensor> {
    adaptive_pool_with_index(input, mode, out_size).map(|(t, _)| t)
}

pub fn adaptive_pool_backward(
    input_shape: &[usize],
    mode: PoolMode,
    out_shape: &[usize],
    max_index: &[usize],
    grad_out: &Tensor,
) -> Tensor {
    let (outer, h, w, oh, ow) = match (input_shape, out_shape) {
        (&[c, h, w], &[_, oh, ow]) => (c, h, w, oh, ow),
        (&[n, l], &[_, ol]) => (n, 1, l, 1, ol),
        _ => unreachable!("shapes validated in forward"),
    };
    let g = grad_out.data();
    let mut gx = vec![0.0; outer * h * w];
    match mode {
        PoolMode::Max => {
            for (gv, &idx) in g.iter().zip(max_index) {
                gx[idx] += gv;
            }
        }
        PoolMode::Avg => {
            for o in 0..outer {
                for i in 0..oh {
                    let (y0, y1) = adaptive_bin(i, h, oh);
                    for j in 0..ow {
                        let (x0, x1) = adaptive_bin(j, w, ow);
                        let share = g[(o * oh + i) * ow + j] / ((y1 - y0) * (x1 - x0)) as f64;
                        for y in y0..y1 {
                            for xx in x0..x1 {
                                gx[(o * h + y) * w + xx] += share;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_parts(input_shape.to_vec(), gx)
}

/// Maps each flat index of a tensor with shape `full` to the flat index of
/// a broadcast operand with shape `small` (same rank, dims equal or 1).
pub fn broadcast_index(full: &[usize], small: &[usize]) -> Result<Vec<usize>> {
    if full.len() != small.len() || full.iter().zip(small).any(|(f, s)| s != f && *s != 1) {
        return Err(Error::dim("broadcast", format!("{small:?} does not broadcast to {full:?}")));
    }
    let n: usize = full.iter().product();
    let rank = full.len();
    let mut small_strides = vec![0; rank];
    let mut acc = 1;
    for d in (0..rank).rev() {
        small_strides[d] = if small[d] == 1 { 0 } else { acc };
        acc *= small[d];
    }
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    for _ in 0..n {
        out.push(idx.iter().zip(&small_strides).map(|(i, s)| i * s).sum());
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < full[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Ok(out)
}

/// Nearest-neighbour upsampling of `[C,H,W]` by an integer factor.
pub fn upsample_nearest(input: &Tensor, factor: usize) -> Result<Tensor> {
    let &[c, h, w] = input.shape() else {
        return Err(Error::dim("upsample", format!("input must be [C,H,W], got {:?}", input.shape())));
    };
    if factor == 0 {
        return Err(Error::Invalid("upsample factor must be positive".into()));
    }
    let (ho, wo) = (h * factor, w * factor);
    let x = input.data();
    let mut out = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        for y in 0..ho {
            let row = &x[(ch * h + y / factor) * w..(ch * h + y / factor + 1) * w];
            out.extend((0..wo).map(|xx| row[xx / factor]));
        }
    }
    Ok(Tensor::from_parts(vec![c, ho, wo], out))
}

pub fn upsample_nearest_backward(input_shape: &[usize], factor: usize, grad_out: &Tensor) -> Tensor {
    let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
    let (ho, wo) = (h * factor, w * factor);
    let g = grad_out.data();
    let mut gx = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..ho {
            for xx in 0..wo {
                gx[(ch * h + y / factor) * w + xx / factor] += g[(ch * ho + y) * wo + xx];
            }
        }
    }
    Tensor::from_parts(input_shape.to_vec(), gx)
}

/// Ground-truth id that marks a pixel as unlabeled.
pub const IGNORE_LABEL: u8 = 255;

/// Mean pixel-wise cross-entropy of `[K,H,W]` logits against `H*W` labels.
/// Returns the loss and the per-pixel softmax (`[K,H,W]`) for backward.
pub fn cross_entropy_with_probs(logits: &Tensor, labels: &[u8]) -> Result<(f64, Tensor, usize)> {
    let &[k, h, w] = logits.shape() else {
        return Err(Error::dim("cross_entropy", format!("logits must be [K,H,W], got {:?}", logits.shape())));
    };
    let hw = h * w;
    if labels.len() != hw {
        return Err(Error::dim("cross_entropy", format!("{} labels for {h}x{w} logits", labels.len())));
    }
    let x = logits.data();
    let mut probs = vec![0.0; k * hw];
    let mut total = 0.0;
    let mut valid = 0usize;
    for p in 0..hw {
        let mx = (0..k).map(|c| x[c * hw + p]).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..k).map(|c| (x[c * hw + p] - mx).exp()).sum();
        for c in 0..k {
            probs[c * hw + p] = (x[c * hw + p] - mx).exp() / z;
        }
        let t = labels[p];
        if t == IGNORE_LABEL {
            continue;
        }
        let t = usize::from(t);
        if t >= k {
            return Err(Error::Invalid(format!("label {t} out of range for {k} classes")));
        }
        total += z.ln() + mx - x[t * hw + p];
        valid += 1;
    }
    if valid == 0 {
        return Err(Error::Invalid("cross_entropy: every pixel is ignored".into()));
    }
    Ok((total / valid as f64, Tensor::from_parts(logits.shape().to_vec(), probs), valid))
}

pub fn cross_entropy(logits: &Tensor, labels: &[u8]) -> Result<f64> {
    cross_entropy_with_probs(logits, labels).map(|(l, _, _)| l)
}

pub fn cross_entropy_backward(probs: &Tensor, labels: &[u8], valid: usize, grad: f64) -> Tensor {
    let hw = labels.len();
    let scale = grad / valid as f64;
    let mut gx = probs.data().to_vec();
    for (c, plane) in gx.chunks_mut(hw).enumerate() {
        for (p, v) in plane.iter_mut().enumerate() {
            match labels[p] {
                IGNORE_LABEL => *v = 0.0,
                t if usize::from(t) == c => *v = (*v - 1.0) * scale,
                _ => *v *= scale,
            }
        }
    }
    Tensor::from_parts(probs.shape().to_vec(), gx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn conv_rejects_channel_mismatch_naming_both() {
        let x = Tensor::zeros(&[3, 4, 4]);
        let w = Tensor::zeros(&[2, 5, 1, 1]);
        let err = conv2d(&x, &w, &Tensor::zeros(&[2]), 1, 0).unwrap_err().to_string();
        assert!(err.contains('5') && err.contains('3'), "{err}");
    }

    #[test]
    fn conv_output_size_follows_stride_arithmetic() {
        let x = Tensor::zeros(&[1, 7, 5]);
        let w = Tensor::zeros(&[2, 1, 3, 3]);
        let y = conv2d(&x, &w, &Tensor::zeros(&[2]), 2, 1).unwrap();
        assert_eq!(y.shape(), &[2, 4, 3]);
    }

    #[test]
    fn conv_zero_input_gives_bias() {
        let x = Tensor::zeros(&[2, 3, 3]);
        let w = Tensor::full(&[2, 2, 3, 3], 0.7);
        let b = t(&[2], &[1.5, -2.0]);
        let y = conv2d(&x, &w, &b, 1, 1).unwrap();
        for c in 0..2 {
            for i in 0..9 {
                assert_eq!(y.data()[c * 9 + i], b.data()[c]);
            }
        }
    }

    #[test]
    fn linear_identity_and_zero_input() {
        let x = t(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.25, -1.0]);
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.set(&[i, i], 1.0);
        }
        assert_eq!(linear(&x, &eye, &Tensor::zeros(&[3])).unwrap(), x);
        let b = t(&[2], &[3.0, 4.0]);
        let y = linear(&Tensor::zeros(&[5, 3]), &Tensor::ones(&[2, 3]), &b).unwrap();
        assert!(y.data().chunks(2).all(|r| r == [3.0, 4.0]));
        assert!(linear(&x, &Tensor::zeros(&[3, 2]), &b).is_err());
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let x = t(&[1, 4], &[3.0; 4]);
        let y = layer_norm(&x, &Tensor::ones(&[4]), &Tensor::zeros(&[4]), 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layer_norm_row_123_closed_form() {
        let x = t(&[1, 3], &[1.0, 2.0, 3.0]);
        let y = layer_norm(&x, &Tensor::ones(&[3]), &Tensor::zeros(&[3]), 1e-5).unwrap();
        // mean 2, population variance 2/3
        let s = 1.0 / (2.0f64 / 3.0 + 1e-5).sqrt();
        let want = [-s, 0.0, s];
        for (a, b) in y.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_examples() {
        let y = softmax_rows(&t(&[1, 4], &[0.3; 4])).unwrap();
        assert!(y.data().iter().all(|v| (v - 0.25).abs() < 1e-15));
        let y = softmax_rows(&t(&[1, 2], &[0.0, 3f64.ln()])).unwrap();
        assert!((y.data()[0] - 0.25).abs() < 1e-15 && (y.data()[1] - 0.75).abs() < 1e-15);
        let a = softmax_rows(&t(&[1, 3], &[0.1, -0.4, 2.0])).unwrap();
        let b = softmax_rows(&t(&[1, 3], &[100.1, 99.6, 102.0])).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn pool_binning() {
        let x = t(&[1, 6], &[1.0, 2.0, 3.0, 10.0, 20.0, 30.0]);
        let y = adaptive_pool(&x, PoolMode::Avg, &[2]).unwrap();
        assert_eq!(y.data(), &[2.0, 20.0]);
        let y = adaptive_pool(&x, PoolMode::Max, &[2]).unwrap();
        assert_eq!(y.data(), &[3.0, 30.0]);
        // overlapping bins for non-divisible lengths
        assert_eq!(adaptive_bin(0, 5, 2), (0, 3));
        assert_eq!(adaptive_bin(1, 5, 2), (2, 5));
    }

    #[test]
    fn pool_global_and_errors() {
        let x = t(&[2, 2, 2], &[1.0, 2.0, 3.0, 4.0, -1.0, -1.0, -1.0, 5.0]);
        let y = adaptive_pool(&x, PoolMode::Avg, &[1, 1]).unwrap();
        assert_eq!(y.shape(), &[2, 1, 1]);
        assert_eq!(y.data(), &[2.5, 0.5]);
        assert!(adaptive_pool(&x, PoolMode::Avg, &[0, 1]).is_err());
        assert!(adaptive_pool(&x, PoolMode::Max, &[3, 1]).is_err());
        let c = Tensor::full(&[2, 4, 4], 1.25);
        for mode in [PoolMode::Avg, PoolMode::Max] {
            let y = adaptive_pool(&c, mode, &[2, 3]).unwrap();
            assert!(y.data().iter().all(|&v| v == 1.25));
        }
    }

    #[test]
    fn broadcast_index_channel_and_spatial() {
        assert_eq!(broadcast_index(&[2, 1, 2], &[2, 1, 1]).unwrap(), vec![0, 0, 1, 1]);
        assert_eq!(broadcast_index(&[2, 2], &[1, 2]).unwrap(), vec![0, 1, 0, 1]);
        assert!(broadcast_index(&[2, 2], &[3, 1]).is_err());
    }

    #[test]
    fn cross_entropy_uniform_is_ln_k() {
        let l = cross_entropy(&Tensor::zeros(&[4, 2, 2]), &[0, 1, 2, 3]).unwrap();
        assert_eq!(l, 4f64.ln());
        assert!(cross_entropy(&Tensor::zeros(&[4, 1, 2]), &[255, 255]).is_err());
        assert!(cross_entropy(&Tensor::zeros(&[4, 1, 2]), &[4, 0]).is_err());
    }
}
