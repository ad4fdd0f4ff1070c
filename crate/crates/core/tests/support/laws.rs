//! Seeded property checks shared by the property tests and the acceptance
//! suite. Each returns `Err` with a description of the first violation.

use ivgf_core::augment::{cma_apply, cutmix_apply, cutout_apply, AugConfig, CutoutTarget};
use ivgf_core::fusion::{Agf, Fem, FemMode, Modality, Tem};
use ivgf_core::io::checkpoint::{decode_checkpoint, encode_checkpoint};
use ivgf_core::io::pnm::{encode_pnm, read_pnm};
use ivgf_core::params::ParamStore;
use ivgf_core::{Graph, RngState, Tensor};

use super::{dim, randomize};

pub type Law = Result<(), String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Law {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rows_sum_to_one(t: &Tensor, what: &str) -> Law {
    let cols = t.shape()[1];
    for (r, row) in t.data().chunks(cols).enumerate() {
        let s: f64 = row.iter().sum();
        ensure((s - 1.0).abs() <= 1e-9, || format!("{what} row {r} sums to {s}"))?;
    }
    Ok(())
}

fn open_unit(t: &Tensor, what: &str) -> Law {
    match t.data().iter().find(|&&v| !(v > 0.0 && v < 1.0)) {
        Some(v) => Err(format!("{what} weight {v} outside (0,1)")),
        None => Ok(()),
    }
}

/// Builds FEM, TEM and AGF with random parameters and inputs and checks
/// every attention row and every sigmoid gate they produce.
pub fn normalization(seed: u64) -> Law {
    let mut rng = RngState::new(seed);
    let c = 1 + rng.below(8);
    let (h, w) = (dim(&mut rng), dim(&mut rng));
    let scale = rng.uniform(0.5, 4.0);
    let heads = {
        let d: Vec<usize> = (1..=c).filter(|k| c.is_multiple_of(*k)).collect();
        d[rng.below(d.len())]
    };
    let mut store = ParamStore::new();
    let fem = Fem::new("fem", c, FemMode::Parallel);
    let agf = Agf::new("agf", c, heads).map_err(|e| e.to_string())?;
    let tem = Tem::new("tem", c.max(2), 1 + rng.below(3));
    fem.init(&mut store, &mut rng);
    agf.init(&mut store, &mut rng);
    tem.init(&mut store, &mut rng);
    randomize(&mut store, &mut rng);
    let mut g = Graph::new();
    let fx = g.constant(Tensor::uniform(&[c, h, w], -scale, scale, &mut rng));
    let fy = g.constant(Tensor::uniform(&[c, h, w], -scale, scale, &mut rng));
    for (f, m) in [(fx, Modality::Ir), (fy, Modality::Vis)] {
        let s = fem.spatial_attention(&mut g, &store, f, m).map_err(|e| e.to_string())?;
        open_unit(g.value(s), "spatial")?;
        let ch = fem.channel_attention(&mut g, &store, f, m).map_err(|e| e.to_string())?;
        open_unit(g.value(ch), "channel")?;
    }
    let out = agf.forward(&mut g, &store, fx, fy).map_err(|e| e.to_string())?;
    for p in &out.probs {
        rows_sum_to_one(g.value(*p), "agf attention")?;
    }
    let n = h * w;
    let tx = g.constant(Tensor::uniform(&[n, c.max(2)], -scale, scale, &mut rng));
    let ty = g.constant(Tensor::uniform(&[n, c.max(2)], -scale, scale, &mut rng));
    let t = tem.forward(&mut g, &store, tx, ty).map_err(|e| e.to_string())?;
    rows_sum_to_one(g.value(t.router.expect("adapters enabled")), "tem router")?;
    open_unit(g.value(t.prompt_x), "prompt_x")?;
    open_unit(g.value(t.prompt_y), "prompt_y")
}

/// Every nonzero token row strictly shrinks in norm under TEM gating.
pub fn tem_contraction(seed: u64) -> Law {
    let mut rng = RngState::new(seed);
    let (n, c) = (1 + rng.below(8), 2 + rng.below(7));
    let tem = Tem::new("tem", c, rng.below(3));
    let mut store = ParamStore::new();
    tem.init(&mut store, &mut rng);
    randomize(&mut store, &mut rng);
    let mut g = Graph::new();
    let mut x = Tensor::uniform(&[n, c], -2.0, 2.0, &mut rng);
    if n > 1 {
        // keep one zero row to exercise the non-strict case
        x.data_mut()[..c].iter_mut().for_each(|v| *v = 0.0);
    }
    let tx = g.constant(x.clone());
    let ty = g.constant(Tensor::uniform(&[n, c], -2.0, 2.0, &mut rng));
    let out = tem.forward(&mut g, &store, tx, ty).map_err(|e| e.to_string())?;
    let norm = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>().sqrt();
    for (i, (before, after)) in x.data().chunks(c).zip(g.value(out.x).data().chunks(c)).enumerate() {
        let (b, a) = (norm(before), norm(after));
        if b == 0.0 {
            ensure(a == 0.0, || format!("zero row {i} became {a}"))?;
        } else {
            ensure(a < b, || format!("row {i}: norm {a} not below {b}"))?;
        }
    }
    Ok(())
}

fn aug_inputs(rng: &mut RngState, cfg: &AugConfig) -> (Tensor, Tensor) {
    let c = 1 + rng.below(3);
    let h = cfg.grid.0 * (1 + rng.below(4));
    let w = cfg.grid.1 * (1 + rng.below(4));
    // strictly away from any fill value in [0, 0.01)
    (Tensor::uniform(&[c, h, w], 0.01, 1.0, rng), Tensor::uniform(&[c, h, w], 1.01, 2.0, rng))
}

fn random_aug(rng: &mut RngState) -> AugConfig {
    AugConfig {
        grid: (1 + rng.below(4), 1 + rng.below(4)),
        p_cutmix: rng.next_f64(),
        p_cutout: rng.next_f64(),
        cutout_cells: 0,
        fill_value: rng.uniform(0.0, 0.01),
        enabled: true,
    }
}

/// Cell index of pixel `(r, c)` on an evenly divided grid.
fn cell_of(r: usize, c: usize, h: usize, w: usize, grid: (usize, usize)) -> usize {
    (r / (h / grid.0)) * grid.1 + c / (w / grid.1)
}

/// Cutmix moves values between modalities without changing any, swaps
/// exactly the recorded cells and leaves every other position alone.
pub fn cutmix_laws(seed: u64) -> Law {
    let mut rng = RngState::new(seed);
    let cfg = random_aug(&mut rng);
    let (x, y) = aug_inputs(&mut rng, &cfg);
    let (xo, yo, rec) = cutmix_apply(&x, &y, &cfg, &mut rng).map_err(|e| e.to_string())?;
    let &[ch, h, w] = x.shape() else { unreachable!() };
    for k in 0..ch {
        for r in 0..h {
            for c in 0..w {
                let i = (k * h + r) * w + c;
                let swapped = rec.swapped_cells.contains(&cell_of(r, c, h, w, cfg.grid));
                let (a, b) = (xo.data()[i], yo.data()[i]);
                let (x0, y0) = (x.data()[i], y.data()[i]);
                let ok = if swapped { a == y0 && b == x0 } else { a == x0 && b == y0 };
                ensure(ok, || format!("pixel {i} (swapped={swapped}) broke the exchange law"))?;
            }
        }
    }
    let mut before: Vec<u64> = x.data().iter().chain(y.data()).map(|v| v.to_bits()).collect();
    let mut after: Vec<u64> = xo.data().iter().chain(yo.data()).map(|v| v.to_bits()).collect();
    before.sort_unstable();
    after.sort_unstable();
    ensure(before == after, || "pixel multiset changed".into())
}

/// Cutout erases exactly `cells · area · C` elements of one modality.
pub fn cutout_count(seed: u64) -> Law {
    let mut rng = RngState::new(seed);
    let mut cfg = random_aug(&mut rng);
    cfg.p_cutout = 1.0;
    cfg.cutout_cells = rng.below(cfg.grid.0 * cfg.grid.1 + 1);
    let (x, y) = aug_inputs(&mut rng, &cfg);
    let (xo, yo, rec) = cutout_apply(&x, &y, &cfg, &mut rng).map_err(|e| e.to_string())?;
    let &[ch, h, w] = x.shape() else { unreachable!() };
    let area = (h / cfg.grid.0) * (w / cfg.grid.1);
    let diff = |a: &Tensor, b: &Tensor| -> Vec<f64> {
        a.data().iter().zip(b.data()).filter(|(p, q)| p != q).map(|(p, _)| *p).collect()
    };
    let (dx, dy) = (diff(&xo, &x), diff(&yo, &y));
    let (hit, untouched) = match rec.cutout_modality {
        CutoutTarget::Ir => (dx, dy),
        CutoutTarget::Vis => (dy, dx),
        CutoutTarget::None => return Err("p_cutout = 1 but no modality was cut".into()),
    };
    ensure(untouched.is_empty(), || "cutout touched both modalities".into())?;
    let want = cfg.cutout_cells * area * ch;
    ensure(hit.len() == want, || format!("{} elements changed, expected {want}", hit.len()))?;
    ensure(hit.iter().all(|&v| v == cfg.fill_value), || "changed element differs from fill".into())?;
    ensure(rec.cutout_cells_applied.len() == cfg.cutout_cells, || "record cell count".into())
}

/// Zero probabilities return bit-identical tensors and an empty record.
pub fn zero_probability_identity(seed: u64) -> Law {
    let mut rng = RngState::new(seed);
    let mut cfg = random_aug(&mut rng);
    cfg.p_cutmix = 0.0;
    cfg.p_cutout = 0.0;
    cfg.cutout_cells = 1;
    let (x, y) = aug_inputs(&mut rng, &cfg);
    let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let (xo, yo, rec) = cma_apply(&x, &y, &cfg, &rng).map_err(|e| e.to_string())?;
    ensure(bits(&xo) == bits(&x) && bits(&yo) == bits(&y), || "p = 0 changed pixels".into())?;
    ensure(rec.is_identity(), || format!("p = 0 produced record {rec:?}"))
}

/// Fraction of `trials` seeded cutouts at `p_cutout = 0.5` that hit infrared.
pub fn cutout_ir_frequency(seed: u64, trials: u64) -> f64 {
    let cfg = AugConfig { grid: (2, 2), p_cutmix: 0.0, p_cutout: 0.5, cutout_cells: 1, fill_value: 0.0, enabled: true };
    let x = Tensor::ones(&[1, 2, 2]);
    let root = RngState::new(seed);
    let hits = (0..trials)
        .filter(|&t| {
            let (_, _, rec) = cutout_apply(&x, &x, &cfg, &mut root.fork(t)).expect("valid grid");
            rec.cutout_modality == CutoutTarget::Ir
        })
        .count();
    hits as f64 / trials as f64
}

fn random_store(rng: &mut RngState) -> ParamStore {
    let mut store = ParamStore::new();
    for i in 0..1 + rng.below(5) {
        let shape: Vec<usize> = (0..1 + rng.below(3)).map(|_| 1 + rng.below(4)).collect();
        store.insert(format!("p{i}.w"), Tensor::uniform(&shape, -3.0, 3.0, rng));
    }
    store
}

/// Save/load keeps names and shapes and quantizes values to the nearest f32.
pub fn checkpoint_round_trip(seed: u64) -> Law {
    let mut rng = RngState::new(seed);
    let store = random_store(&mut rng);
    let bytes = encode_checkpoint(&store).map_err(|e| e.to_string())?;
    let back = decode_checkpoint(&bytes).map_err(|e| e.to_string())?;
    ensure(back.names().eq(store.names()), || "names differ".into())?;
    for ((name, a), (_, b)) in store.iter().zip(back.iter()) {
        ensure(a.shape() == b.shape(), || format!("{name}: shape changed"))?;
        for (&u, &v) in a.data().iter().zip(b.data()) {
            ensure(v == f64::from(u as f32), || format!("{name}: {u} loaded as {v}"))?;
        }
    }
    Ok(())
}

/// Flipping one bit of one stored value changes that value and nothing else.
pub fn checkpoint_byte_flip(seed: u64) -> Law {
    let mut rng = RngState::new(seed);
    let store = random_store(&mut rng);
    let mut bytes = encode_checkpoint(&store).map_err(|e| e.to_string())?;
    // locate value payloads by walking the documented layout
    let mut spans = Vec::new();
    let mut pos = 12;
    for (name, t) in store.iter() {
        pos += 4 + name.len() + 4 + 4 * t.rank();
        spans.push((pos, t.len()));
        pos += 4 * t.len();
    }
    let (entry, &(start, len)) = {
        let e = rng.below(spans.len());
        (e, &spans[e])
    };
    let elem = rng.below(len);
    let byte = start + 4 * elem + rng.below(3);
    bytes[byte] ^= 1 << rng.below(8);
    let before =
        decode_checkpoint(&encode_checkpoint(&store).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let after = decode_checkpoint(&bytes).map_err(|e| e.to_string())?;
    let mut changed = Vec::new();
    for (i, ((_, a), (_, b))) in before.iter().zip(after.iter()).enumerate() {
        ensure(a.shape() == b.shape(), || "shape changed".into())?;
        for (j, (u, v)) in a.data().iter().zip(b.data()).enumerate() {
            if u.to_bits() != v.to_bits() {
                changed.push((i, j));
            }
        }
    }
    ensure(changed == [(entry, elem)], || format!("flip at byte {byte} changed {changed:?}"))
}

/// Image write/read stays within half a quantization step.
pub fn pnm_round_trip(seed: u64) -> Law {
    let mut rng = RngState::new(seed);
    let c = if rng.bernoulli(0.5) { 1 } else { 3 };
    let img = Tensor::uniform(&[c, dim(&mut rng), dim(&mut rng)], 0.0, 1.0, &mut rng);
    let back = read_pnm(&encode_pnm(&img).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let plane = img.shape()[1] * img.shape()[2];
    for ch in 0..3 {
        let src = if c == 1 { 0 } else { ch };
        for p in 0..plane {
            let (a, b) = (img.data()[src * plane + p], back.data()[ch * plane + p]);
            ensure((a - b).abs() <= 0.5 / 255.0 + 1e-12, || format!("pixel {p}: {a} -> {b}"))?;
        }
    }
    Ok(())
}
