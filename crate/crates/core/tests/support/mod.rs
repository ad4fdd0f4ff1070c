//! Naive reference implementations written directly from the block
//! definitions with explicit index loops. They share no code with the
//! library kernels beyond reading parameter tensors by name.

#![allow(dead_code)]

pub mod equivalence;
pub mod laws;

use ivgf_core::fusion::FemMode;
use ivgf_core::params::ParamStore;
use ivgf_core::{RngState, Tensor};

/// Row-major `[d0, d1, d2]` array.
#[derive(Clone, Debug)]
pub struct Arr3 {
    pub d: [usize; 3],
    pub v: Vec<f64>,
}

impl Arr3 {
    pub fn zeros(d: [usize; 3]) -> Self {
        Self { d, v: vec![0.0; d[0] * d[1] * d[2]] }
    }
    pub fn from(t: &Tensor) -> Self {
        let s = t.shape();
        Self { d: [s[0], s[1], s[2]], v: t.data().to_vec() }
    }
    pub fn get(&self, a: usize, b: usize, c: usize) -> f64 {
        self.v[(a * self.d[1] + b) * self.d[2] + c]
    }
    pub fn set(&mut self, a: usize, b: usize, c: usize, x: f64) {
        self.v[(a * self.d[1] + b) * self.d[2] + c] = x;
    }
}

/// Row-major `[rows, cols]` matrix.
#[derive(Clone, Debug)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub v: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, v: vec![0.0; rows * cols] }
    }
    pub fn from(t: &Tensor) -> Self {
        Self { rows: t.shape()[0], cols: t.shape()[1], v: t.data().to_vec() }
    }
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.v[r * self.cols + c]
    }
    pub fn set(&mut self, r: usize, c: usize, x: f64) {
        self.v[r * self.cols + c] = x;
    }
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

fn p<'a>(store: &'a ParamStore, name: &str) -> &'a Tensor {
    store.get(name).unwrap_or_else(|_| panic!("missing parameter {name}"))
}

pub fn conv2d(x: &Arr3, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Arr3 {
    let ws = w.shape();
    let (co_n, ci_n, k) = (ws[0], ws[1], ws[2]);
    let [_, h, wd] = x.d;
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let mut out = Arr3::zeros([co_n, ho, wo]);
    for co in 0..co_n {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut s = b.data()[co];
                for ci in 0..ci_n {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                continue;
                            }
                            s += w.at(&[co, ci, ky, kx]) * x.get(ci, iy as usize, ix as usize);
                        }
                    }
                }
                out.set(co, oy, ox, s);
            }
        }
    }
    out
}

pub fn linear(x: &Mat, w: &Tensor, b: &Tensor) -> Mat {
    let (d_out, d_in) = (w.shape()[0], w.shape()[1]);
    assert_eq!(x.cols, d_in);
    let mut out = Mat::zeros(x.rows, d_out);
    for r in 0..x.rows {
        for o in 0..d_out {
            let mut s = b.data()[o];
            for i in 0..d_in {
                s += x.get(r, i) * w.at(&[o, i]);
            }
            out.set(r, o, s);
        }
    }
    out
}

pub fn layer_norm(x: &Mat, gamma: &Tensor, beta: &Tensor, eps: f64) -> Mat {
    let mut out = Mat::zeros(x.rows, x.cols);
    let n = x.cols as f64;
    for r in 0..x.rows {
        let mut mean = 0.0;
        for c in 0..x.cols {
            mean += x.get(r, c);
        }
        mean /= n;
        let mut var = 0.0;
        for c in 0..x.cols {
            var += (x.get(r, c) - mean).powi(2);
        }
        var /= n;
        for c in 0..x.cols {
            let y = (x.get(r, c) - mean) / (var + eps).sqrt();
            out.set(r, c, gamma.data()[c] * y + beta.data()[c]);
        }
    }
    out
}

pub fn softmax_rows(x: &Mat) -> Mat {
    let mut out = Mat::zeros(x.rows, x.cols);
    for r in 0..x.rows {
        let mut m = f64::NEG_INFINITY;
        for c in 0..x.cols {
            m = m.max(x.get(r, c));
        }
        let mut z = 0.0;
        for c in 0..x.cols {
            z += (x.get(r, c) - m).exp();
        }
        for c in 0..x.cols {
            out.set(r, c, (x.get(r, c) - m).exp() / z);
        }
    }
    out
}

fn conv_p(store: &ParamStore, name: &str, x: &Arr3, stride: usize, pad: usize) -> Arr3 {
    conv2d(x, p(store, &format!("{name}.weight")), p(store, &format!("{name}.bias")), stride, pad)
}

fn linear_p(store: &ParamStore, name: &str, x: &Mat) -> Mat {
    linear(x, p(store, &format!("{name}.weight")), p(store, &format!("{name}.bias")))
}

/// `[1,H,W]` spatial weights for modality tag `m` ("x" or "y").
pub fn spatial_attention(store: &ParamStore, prefix: &str, m: &str, f: &Arr3) -> Arr3 {
    let mut h = conv_p(store, &format!("{prefix}.{m}.spatial1"), f, 1, 0);
    h.v.iter_mut().for_each(|v| *v = relu(*v));
    let mut s = conv_p(store, &format!("{prefix}.{m}.spatial2"), &h, 1, 0);
    s.v.iter_mut().for_each(|v| *v = sigmoid(*v));
    s
}

/// `C` channel weights from the avg/max descriptor.
pub fn channel_attention(store: &ParamStore, prefix: &str, m: &str, f: &Arr3) -> Vec<f64> {
    let [c, h, w] = f.d;
    let mut desc = Mat::zeros(1, 2 * c);
    for ch in 0..c {
        let mut sum = 0.0;
        let mut mx = f64::NEG_INFINITY;
        for y in 0..h {
            for x in 0..w {
                sum += f.get(ch, y, x);
                mx = mx.max(f.get(ch, y, x));
            }
        }
        desc.set(0, ch, sum / (h * w) as f64);
        desc.set(0, c + ch, mx);
    }
    let mut hid = linear_p(store, &format!("{prefix}.{m}.channel1"), &desc);
    hid.v.iter_mut().for_each(|v| *v = relu(*v));
    let out = linear_p(store, &format!("{prefix}.{m}.channel2"), &hid);
    out.v.iter().map(|&v| sigmoid(v)).collect()
}

fn cross_spatial(store: &ParamStore, prefix: &str, fx: &Arr3, fy: &Arr3) -> (Arr3, Arr3) {
    let wx = spatial_attention(store, prefix, "x", fx);
    let wy = spatial_attention(store, prefix, "y", fy);
    let [c, h, w] = fx.d;
    let (mut sxy, mut syx) = (Arr3::zeros(fx.d), Arr3::zeros(fx.d));
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                sxy.set(ch, y, x, fx.get(ch, y, x) + fy.get(ch, y, x) * wy.get(0, y, x));
                syx.set(ch, y, x, fy.get(ch, y, x) + fx.get(ch, y, x) * wx.get(0, y, x));
            }
        }
    }
    (sxy, syx)
}

/// `base + src ⊙ W_c(src)` per channel.
fn plus_channel(store: &ParamStore, prefix: &str, m: &str, base: &Arr3, src: &Arr3) -> Arr3 {
    let wc = channel_attention(store, prefix, m, src);
    let mut out = base.clone();
    let [c, h, w] = src.d;
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                out.set(ch, y, x, base.get(ch, y, x) + src.get(ch, y, x) * wc[ch]);
            }
        }
    }
    out
}

pub fn fem_forward(store: &ParamStore, prefix: &str, mode: FemMode, fx: &Arr3, fy: &Arr3) -> (Arr3, Arr3) {
    match mode {
        FemMode::Parallel => {
            let (sxy, syx) = cross_spatial(store, prefix, fx, fy);
            (plus_channel(store, prefix, "x", &sxy, fx), plus_channel(store, prefix, "y", &syx, fy))
        }
        FemMode::Serial => {
            let (sxy, syx) = cross_spatial(store, prefix, fx, fy);
            (plus_channel(store, prefix, "x", &sxy, &sxy), plus_channel(store, prefix, "y", &syx, &syx))
        }
        FemMode::ChannelOnly => (plus_channel(store, prefix, "x", fx, fx), plus_channel(store, prefix, "y", fy, fy)),
        FemMode::SpatialOnly => cross_spatial(store, prefix, fx, fy),
    }
}

/// Multi-head cross-attention from `[C, L]` sources to `[L_q, C]`.
/// `dir` is the parameter tag ("xy" or "yx").
pub fn cross_attention(store: &ParamStore, prefix: &str, dir: &str, heads: usize, q_src: &Mat, kv_src: &Mat) -> Mat {
    let transpose = |m: &Mat| {
        let mut t = Mat::zeros(m.cols, m.rows);
        for r in 0..m.rows {
            for c in 0..m.cols {
                t.set(c, r, m.get(r, c));
            }
        }
        t
    };
    let q = linear_p(store, &format!("{prefix}.{dir}.q"), &transpose(q_src));
    let k = linear_p(store, &format!("{prefix}.{dir}.k"), &transpose(kv_src));
    let v = linear_p(store, &format!("{prefix}.{dir}.v"), &transpose(kv_src));
    let c = q.cols;
    let dk = c / heads;
    let mut out = Mat::zeros(q.rows, c);
    for h in 0..heads {
        let mut scores = Mat::zeros(q.rows, k.rows);
        for i in 0..q.rows {
            for j in 0..k.rows {
                let mut s = 0.0;
                for d in 0..dk {
                    s += q.get(i, h * dk + d) * k.get(j, h * dk + d);
                }
                scores.set(i, j, s / (dk as f64).sqrt());
            }
        }
        let probs = softmax_rows(&scores);
        for i in 0..q.rows {
            for d in 0..dk {
                let mut s = 0.0;
                for j in 0..k.rows {
                    s += probs.get(i, j) * v.get(j, h * dk + d);
                }
                out.set(i, h * dk + d, s);
            }
        }
    }
    out
}

pub fn agf_forward(store: &ParamStore, prefix: &str, heads: usize, merge_kernel: usize, fx: &Arr3, fy: &Arr3) -> Arr3 {
    let [c, h, w] = fx.d;
    let flat = |f: &Arr3| Mat { rows: c, cols: h * w, v: f.v.clone() };
    let (rx, ry) = (flat(fx), flat(fy));
    let axy = cross_attention(store, prefix, "xy", heads, &rx, &ry);
    let ayx = cross_attention(store, prefix, "yx", heads, &ry, &rx);
    let mut map = Arr3::zeros([2 * c, h, w]);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                map.set(ch, y, x, axy.get(y * w + x, ch));
                map.set(c + ch, y, x, ayx.get(y * w + x, ch));
            }
        }
    }
    let mut m = conv_p(store, &format!("{prefix}.merge_a"), &map, 1, 0);
    m.v.iter_mut().for_each(|v| *v = relu(*v));
    let m = conv_p(store, &format!("{prefix}.merge_b"), &m, 1, 0);
    conv_p(store, &format!("{prefix}.merge_c"), &m, 1, merge_kernel / 2)
}

pub struct TemRef {
    pub x: Mat,
    pub y: Mat,
    pub prompt_x: Vec<f64>,
    pub prompt_y: Vec<f64>,
    pub router: Option<Mat>,
}

pub fn tem_forward(store: &ParamStore, prefix: &str, adapters: usize, tx: &Mat, ty: &Mat) -> TemRef {
    let (n, c) = (tx.rows, tx.cols);
    let mut cat = Mat::zeros(n, 2 * c);
    for r in 0..n {
        for j in 0..c {
            cat.set(r, j, tx.get(r, j));
            cat.set(r, c + j, ty.get(r, j));
        }
    }
    let normed =
        layer_norm(&cat, p(store, &format!("{prefix}.norm.gamma")), p(store, &format!("{prefix}.norm.beta")), 1e-5);
    let mut phi = linear_p(store, &format!("{prefix}.reduce"), &normed);
    let mut router = None;
    if adapters > 0 {
        let weights = softmax_rows(&linear_p(store, &format!("{prefix}.router"), &phi));
        let mut mixed = phi.clone();
        for k in 0..adapters {
            let mut hid = linear_p(store, &format!("{prefix}.adapter{k}.down"), &phi);
            hid.v.iter_mut().for_each(|v| *v = relu(*v));
            let a = linear_p(store, &format!("{prefix}.adapter{k}.up"), &hid);
            for r in 0..n {
                for j in 0..phi.cols {
                    let cur = mixed.get(r, j);
                    mixed.set(r, j, cur + a.get(r, j) * weights.get(r, k));
                }
            }
        }
        phi = mixed;
        router = Some(weights);
    }
    // average over the two halves of each row (ceil/floor bins for odd widths)
    let c1 = phi.cols;
    let bins = [(0, c1.div_ceil(2)), (c1 / 2, c1)];
    let mut prompts = [vec![0.0; n], vec![0.0; n]];
    for r in 0..n {
        for (b, &(lo, hi)) in bins.iter().enumerate() {
            let mut s = 0.0;
            for j in lo..hi {
                s += phi.get(r, j);
            }
            prompts[b][r] = sigmoid(s / (hi - lo) as f64);
        }
    }
    let mut x = tx.clone();
    let mut y = ty.clone();
    for r in 0..n {
        for j in 0..c {
            x.set(r, j, tx.get(r, j) * prompts[0][r]);
            y.set(r, j, ty.get(r, j) * prompts[1][r]);
        }
    }
    let [prompt_x, prompt_y] = prompts;
    TemRef { x, y, prompt_x, prompt_y, router }
}

/// Overwrites every parameter with `U(-1, 1)` so biases and norm affine
/// terms are exercised too.
pub fn randomize(store: &mut ParamStore, rng: &mut RngState) {
    for (_, t) in store.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = rng.uniform(-1.0, 1.0));
    }
}

pub fn rand_tensor(shape: &[usize], rng: &mut RngState) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

/// Random size in `1..=4`.
pub fn dim(rng: &mut RngState) -> usize {
    1 + rng.below(4)
}
