//! One randomized comparison per kernel: library output vs the naive loops,
//! returning the largest absolute difference.

use ivgf_core::fusion::{Agf, Direction, Fem, FemMode, Modality, Tem};
use ivgf_core::ops;
use ivgf_core::params::ParamStore;
use ivgf_core::{Graph, RngState};

use super::*;

pub type Check = fn(&mut RngState) -> f64;

/// Every kernel under test, by name.
pub const KERNELS: [(&str, Check); 10] = [
    ("conv2d", conv2d_trial),
    ("linear", linear_trial),
    ("layer_norm", layer_norm_trial),
    ("softmax_rows", softmax_trial),
    ("spatial_attention", spatial_attention_trial),
    ("channel_attention", channel_attention_trial),
    ("fem_forward", fem_trial),
    ("cross_attention", cross_attention_trial),
    ("agf_forward", agf_trial),
    ("tem_forward", tem_trial),
];

/// Largest difference over `trials` seeded trials of `check`.
pub fn worst(check: Check, seed: u64, trials: u64) -> f64 {
    (0..trials).map(|t| check(&mut RngState::new(seed + t))).fold(0.0, f64::max)
}

fn shape_ok(ok: bool) -> f64 {
    if ok {
        0.0
    } else {
        f64::INFINITY
    }
}

pub fn conv2d_trial(rng: &mut RngState) -> f64 {
    let (ci, co) = (dim(rng), dim(rng));
    let k = if rng.bernoulli(0.5) { 3 } else { 1 };
    let (stride, pad) = (1 + rng.below(2), rng.below(k / 2 + 1));
    let (h, w) = (dim(rng).max(k - 2 * pad), dim(rng).max(k - 2 * pad));
    let x = rand_tensor(&[ci, h, w], rng);
    let wt = rand_tensor(&[co, ci, k, k], rng);
    let b = rand_tensor(&[co], rng);
    let got = ops::conv2d(&x, &wt, &b, stride, pad).unwrap();
    let want = conv2d(&Arr3::from(&x), &wt, &b, stride, pad);
    shape_ok(got.shape() == want.d).max(max_diff(got.data(), &want.v))
}

pub fn linear_trial(rng: &mut RngState) -> f64 {
    let (n, di, dout) = (dim(rng), dim(rng), dim(rng));
    let x = rand_tensor(&[n, di], rng);
    let w = rand_tensor(&[dout, di], rng);
    let b = rand_tensor(&[dout], rng);
    let got = ops::linear(&x, &w, &b).unwrap();
    max_diff(got.data(), &linear(&Mat::from(&x), &w, &b).v)
}

pub fn layer_norm_trial(rng: &mut RngState) -> f64 {
    let (n, c) = (dim(rng), dim(rng));
    let x = rand_tensor(&[n, c], rng);
    let (g, b) = (rand_tensor(&[c], rng), rand_tensor(&[c], rng));
    let got = ops::layer_norm(&x, &g, &b, 1e-5).unwrap();
    max_diff(got.data(), &layer_norm(&Mat::from(&x), &g, &b, 1e-5).v)
}

pub fn softmax_trial(rng: &mut RngState) -> f64 {
    let x = rand_tensor(&[dim(rng), dim(rng)], rng).map(|v| 4.0 * v);
    let got = ops::softmax_rows(&x).unwrap();
    max_diff(got.data(), &softmax_rows(&Mat::from(&x)).v)
}

fn fem_setup(rng: &mut RngState, mode: FemMode) -> (Fem, ParamStore, [usize; 3]) {
    let d = [dim(rng), dim(rng), dim(rng)];
    let fem = Fem::new("fem", d[0], mode);
    let mut store = ParamStore::new();
    fem.init(&mut store, rng);
    randomize(&mut store, rng);
    (fem, store, d)
}

pub fn spatial_attention_trial(rng: &mut RngState) -> f64 {
    let (fem, store, d) = fem_setup(rng, FemMode::Parallel);
    let f = rand_tensor(&d, rng);
    let mut err: f64 = 0.0;
    for (m, tag) in [(Modality::Ir, "x"), (Modality::Vis, "y")] {
        let mut g = Graph::new();
        let v = g.constant(f.clone());
        let ws = fem.spatial_attention(&mut g, &store, v, m).unwrap();
        let want = spatial_attention(&store, "fem", tag, &Arr3::from(&f));
        err = err.max(shape_ok(g.shape(ws) == want.d)).max(max_diff(g.value(ws).data(), &want.v));
    }
    err
}

pub fn channel_attention_trial(rng: &mut RngState) -> f64 {
    let (fem, store, d) = fem_setup(rng, FemMode::Parallel);
    let f = rand_tensor(&d, rng);
    let mut err: f64 = 0.0;
    for (m, tag) in [(Modality::Ir, "x"), (Modality::Vis, "y")] {
        let mut g = Graph::new();
        let v = g.constant(f.clone());
        let wc = fem.channel_attention(&mut g, &store, v, m).unwrap();
        let want = channel_attention(&store, "fem", tag, &Arr3::from(&f));
        err = err.max(shape_ok(g.shape(wc) == [d[0], 1, 1])).max(max_diff(g.value(wc).data(), &want));
    }
    err
}

/// Cycles through the four modes so every trial batch covers all of them.
pub fn fem_trial(rng: &mut RngState) -> f64 {
    let modes = [FemMode::Parallel, FemMode::Serial, FemMode::ChannelOnly, FemMode::SpatialOnly];
    let mode = modes[rng.below(4)];
    let (fem, store, d) = fem_setup(rng, mode);
    let (fx, fy) = (rand_tensor(&d, rng), rand_tensor(&d, rng));
    let mut g = Graph::new();
    let (vx, vy) = (g.constant(fx.clone()), g.constant(fy.clone()));
    let (ox, oy) = fem.forward(&mut g, &store, vx, vy).unwrap();
    let (wx, wy) = fem_forward(&store, "fem", mode, &Arr3::from(&fx), &Arr3::from(&fy));
    max_diff(g.value(ox).data(), &wx.v).max(max_diff(g.value(oy).data(), &wy.v))
}

fn agf_setup(rng: &mut RngState) -> (Agf, ParamStore, [usize; 3]) {
    let c = dim(rng);
    let divisors: Vec<usize> = (1..=c).filter(|h| c.is_multiple_of(*h)).collect();
    let heads = divisors[rng.below(divisors.len())];
    let agf = Agf::new("agf", c, heads).unwrap();
    let mut store = ParamStore::new();
    agf.init(&mut store, rng);
    randomize(&mut store, rng);
    (agf, store, [c, dim(rng), dim(rng)])
}

pub fn cross_attention_trial(rng: &mut RngState) -> f64 {
    let (agf, store, [c, _, _]) = agf_setup(rng);
    let (lq, lkv) = (dim(rng), dim(rng));
    let (q, kv) = (rand_tensor(&[c, lq], rng), rand_tensor(&[c, lkv], rng));
    let mut err: f64 = 0.0;
    for (dir, tag) in [(Direction::XToY, "xy"), (Direction::YToX, "yx")] {
        let mut g = Graph::new();
        let (vq, vkv) = (g.constant(q.clone()), g.constant(kv.clone()));
        let (out, _) = agf.cross_attention(&mut g, &store, vq, vkv, dir).unwrap();
        let want = cross_attention(&store, "agf", tag, agf.heads, &Mat::from(&q), &Mat::from(&kv));
        err = err.max(shape_ok(g.shape(out) == [lq, c])).max(max_diff(g.value(out).data(), &want.v));
    }
    err
}

pub fn agf_trial(rng: &mut RngState) -> f64 {
    let (agf, store, d) = agf_setup(rng);
    let (fx, fy) = (rand_tensor(&d, rng), rand_tensor(&d, rng));
    let mut g = Graph::new();
    let (vx, vy) = (g.constant(fx.clone()), g.constant(fy.clone()));
    let out = agf.forward(&mut g, &store, vx, vy).unwrap();
    let want = agf_forward(&store, "agf", agf.heads, agf.merge_kernel, &Arr3::from(&fx), &Arr3::from(&fy));
    shape_ok(g.shape(out.fused) == d).max(max_diff(g.value(out.fused).data(), &want.v))
}

pub fn tem_trial(rng: &mut RngState) -> f64 {
    let (n, c, adapters) = (dim(rng), 2 + rng.below(3), rng.below(3));
    let tem = Tem::new("tem", c, adapters);
    let mut store = ParamStore::new();
    tem.init(&mut store, rng);
    randomize(&mut store, rng);
    let (tx, ty) = (rand_tensor(&[n, c], rng), rand_tensor(&[n, c], rng));
    let mut g = Graph::new();
    let (vx, vy) = (g.constant(tx.clone()), g.constant(ty.clone()));
    let out = tem.forward(&mut g, &store, vx, vy).unwrap();
    let want = tem_forward(&store, "tem", adapters, &Mat::from(&tx), &Mat::from(&ty));
    let router = match (out.router, want.router) {
        (Some(r), Some(w)) => max_diff(g.value(r).data(), &w.v),
        (None, None) => 0.0,
        _ => f64::INFINITY,
    };
    max_diff(g.value(out.x).data(), &want.x.v)
        .max(max_diff(g.value(out.y).data(), &want.y.v))
        .max(max_diff(g.value(out.prompt_x).data(), &want.prompt_x))
        .max(max_diff(g.value(out.prompt_y).data(), &want.prompt_y))
        .max(router)
}
