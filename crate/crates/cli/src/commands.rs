use std::path::{Path, PathBuf};

use ivgf_core::augment::cma_apply;
use ivgf_core::backbone::{project_max, Missing};
use ivgf_core::gradcheck::suite::run_suite;
use ivgf_core::io::checkpoint::{load_checkpoint, save_checkpoint};
use ivgf_core::io::config::load_config;
use ivgf_core::io::pnm::{read_pnm_file, write_pgm_bytes, write_pnm};
use ivgf_core::pipeline::{evaluate, generate_split, loss_curve_csv, read_dataset, train, write_dataset, Split};
use ivgf_core::rng::streams;
use ivgf_core::{Config, Error, Model, OpKind, Result, RngState};

use crate::meta::{resolve_seed, RunMeta, SeedSource};

pub const META_FILE: &str = "run_meta.txt";

fn config(path: Option<&Path>) -> Result<Config> {
    path.map_or_else(|| Ok(Config::default()), load_config)
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io { path: path.into(), source: e })
}

fn read_pair(ir: &Path, vis: &Path) -> Result<(ivgf_core::Tensor, ivgf_core::Tensor)> {
    let x = read_pnm_file(ir)?;
    let y = read_pnm_file(vis)?;
    if x.shape() != y.shape() {
        return Err(Error::Dimension {
            op: "input pair",
            detail: format!("infrared {:?} vs visible {:?}", x.shape(), y.shape()),
        });
    }
    Ok((x, y))
}

/// Parameters from a checkpoint checked against the config, or freshly
/// initialized from `seed`.
fn params(model: &Model, ckpt: Option<&Path>, seed: u64) -> Result<ivgf_core::ParamStore> {
    match ckpt {
        Some(p) => {
            let store = load_checkpoint(p)?;
            model.check_params(&store)?;
            Ok(store)
        }
        None => Ok(model.init_params(seed)),
    }
}

pub fn forward(
    cfg_path: Option<&Path>,
    ir: &Path,
    vis: &Path,
    ckpt: Option<&Path>,
    out_dir: &Path,
    dump_features: bool,
    seed: Option<u64>,
) -> Result<u8> {
    let cfg = config(cfg_path)?;
    let seed = resolve_seed(seed, cfg.train.seed)?;
    let (x, y) = read_pair(ir, vis)?;
    let model = Model::new(&cfg)?;
    model.backbone.check_input(x.shape())?;
    let store = params(&model, ckpt, seed.0)?;

    let mut outputs = vec![PathBuf::from("mask.pgm")];
    let mut feature_files = Vec::new();
    if dump_features {
        for s in 1..=4 {
            for t in ["ir", "vis", "fused"] {
                feature_files.push(PathBuf::from(format!("features/scale{s}_{t}.pgm")));
            }
        }
        outputs.extend(feature_files.iter().cloned());
    }
    mkdir(out_dir)?;
    let refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    let meta = RunMeta::begin(out_dir.join(META_FILE), "forward", Some(seed), &cfg, &refs)?;
    meta.run(|| {
        let f = model.forward(&store, &x, &y)?;
        let logits = f.graph.value(f.logits);
        if !logits.is_finite() {
            let culprit = f.graph.first_non_finite().unwrap_or_else(|| "logits".into());
            return Err(Error::NonFinite(culprit));
        }
        let mask = ivgf_core::pipeline::argmax_classes(logits);
        let (h, w) = (x.shape()[1], x.shape()[2]);
        write_pgm_bytes(w, h, &mask, out_dir.join("mask.pgm"))?;
        if dump_features {
            mkdir(&out_dir.join("features"))?;
            let mut files = feature_files.iter();
            for s in &f.features.scales {
                for v in [s.x, s.y, s.fused] {
                    let img = project_max(f.graph.value(v))?;
                    write_pnm(&img, out_dir.join(files.next().expect("12 names")))?;
                }
            }
        }
        println!("wrote {} ({w}x{h})", out_dir.join("mask.pgm").display());
        Ok(0)
    })
}

pub fn gradcheck(seed: Option<u64>, trials: usize, fault: Option<OpKind>) -> Result<u8> {
    let (seed, source) = resolve_seed(seed, 0)?;
    println!("version = {}", env!("CARGO_PKG_VERSION"));
    println!("seed = {seed} ({})", if source == SeedSource::Config { "default" } else { source.as_str() });
    println!("trials = {trials}");
    if let Some(k) = fault {
        println!("injected fault = {}", k.name());
    }
    let reports = run_suite(seed, trials, fault)?;
    println!("{:<11} {:>6} {:>7} {:>12} {:>8}  status", "block", "trials", "coords", "max_rel_err", "tol");
    let mut ok = true;
    for r in &reports {
        let status = if r.passed() { "ok" } else { "FAIL" };
        println!(
            "{:<11} {:>6} {:>7} {:>12.3e} {:>8.0e}  {status}",
            r.block.name(),
            r.trials,
            r.coordinates,
            r.max_rel_err,
            r.block.tolerance()
        );
        if !r.passed() {
            ok = false;
            eprintln!("violation in block {}: {}", r.block.name(), r.worst);
        }
    }
    Ok(if ok { 0 } else { 1 })
}

/// `model.ivgf` -> `model.loss.csv`, `model.meta.txt`.
pub fn sibling(ckpt: &Path, suffix: &str) -> PathBuf {
    ckpt.with_extension(suffix)
}

pub fn train_toy(
    cfg_path: Option<&Path>,
    steps: Option<usize>,
    seed: Option<u64>,
    out_ckpt: &Path,
    data: Option<&Path>,
) -> Result<u8> {
    let cfg = config(cfg_path)?;
    let seed = resolve_seed(seed, cfg.train.seed)?;
    let steps = steps.unwrap_or(cfg.train.steps);
    let scenes = match data {
        Some(dir) => read_dataset(dir)?,
        None => generate_split(seed.0, Split::Train, cfg.data.train_scenes, cfg.data.size)?,
    };
    let model = Model::new(&cfg)?;
    let mut store = model.init_params(seed.0);

    if let Some(dir) = out_ckpt.parent().filter(|d| !d.as_os_str().is_empty()) {
        mkdir(dir)?;
    }
    let loss_path = sibling(out_ckpt, "loss.csv");
    let meta = RunMeta::begin(sibling(out_ckpt, "meta.txt"), "train-toy", Some(seed), &cfg, &[out_ckpt, &loss_path])?;
    meta.run(|| {
        let losses = train(&model, &mut store, &scenes, &cfg, steps, seed.0, |step, loss| {
            if step % 10 == 0 || step == steps {
                println!("step {step:>4}  loss {loss:.6}");
            }
        })?;
        save_checkpoint(&store, out_ckpt)?;
        write_text(&loss_path, &loss_curve_csv(&losses))?;
        println!("wrote {} and {}", out_ckpt.display(), loss_path.display());
        Ok(0)
    })
}

pub fn eval(
    cfg_path: Option<&Path>,
    ckpt: &Path,
    data: Option<&Path>,
    missing: Missing,
    out_dir: &Path,
    seed: Option<u64>,
) -> Result<u8> {
    let cfg = config(cfg_path)?;
    let seed = resolve_seed(seed, cfg.train.seed)?;
    let scenes = match data {
        Some(dir) => read_dataset(dir)?,
        None => generate_split(seed.0, Split::Eval, cfg.data.eval_scenes, cfg.data.size)?,
    };
    let model = Model::new(&cfg)?;
    let store = params(&model, Some(ckpt), seed.0)?;
    mkdir(out_dir)?;
    let meta = RunMeta::begin(
        out_dir.join(META_FILE),
        "eval",
        Some(seed),
        &cfg,
        &[Path::new("report.csv"), Path::new("report.txt")],
    )?;
    meta.run(|| {
        let report = evaluate(&model, &store, &scenes, missing)?;
        write_text(&out_dir.join("report.csv"), &report.to_csv())?;
        let table = format!("missing = {missing}\nscenes = {}\n{}", scenes.len(), report.to_table());
        write_text(&out_dir.join("report.txt"), &table)?;
        print!("{table}");
        Ok(0)
    })
}

pub fn synth(
    cfg_path: Option<&Path>,
    split: Split,
    count: Option<usize>,
    seed: Option<u64>,
    out_dir: &Path,
) -> Result<u8> {
    let cfg = config(cfg_path)?;
    let seed = resolve_seed(seed, cfg.train.seed)?;
    let count = count.unwrap_or(match split {
        Split::Train => cfg.data.train_scenes,
        Split::Eval => cfg.data.eval_scenes,
    });
    if count == 0 {
        return Err(Error::Invalid("--count must be positive".into()));
    }
    let scenes = generate_split(seed.0, split, count, cfg.data.size)?;
    mkdir(out_dir)?;
    let meta = RunMeta::begin(
        out_dir.join(META_FILE),
        "synth",
        Some(seed),
        &cfg,
        &[Path::new("*_ir.ppm, *_vis.ppm, *_mask.pgm")],
    )?;
    meta.run(|| {
        write_dataset(out_dir, &scenes)?;
        println!("wrote {count} scenes to {}", out_dir.display());
        Ok(0)
    })
}

pub fn augment(cfg_path: Option<&Path>, ir: &Path, vis: &Path, seed: Option<u64>, out_dir: &Path) -> Result<u8> {
    let cfg = config(cfg_path)?;
    let seed = resolve_seed(seed, cfg.train.seed)?;
    let (x, y) = read_pair(ir, vis)?;
    mkdir(out_dir)?;
    let meta = RunMeta::begin(
        out_dir.join(META_FILE),
        "augment",
        Some(seed),
        &cfg,
        &[Path::new("ir_aug.ppm"), Path::new("vis_aug.ppm"), Path::new("record.txt")],
    )?;
    meta.run(|| {
        let rng = RngState::at(seed.0, streams::AUGMENT, 0);
        let (xa, ya, record) = cma_apply(&x, &y, &cfg.aug, &rng)?;
        write_pnm(&xa.map(|v| v.clamp(0.0, 1.0)), out_dir.join("ir_aug.ppm"))?;
        write_pnm(&ya.map(|v| v.clamp(0.0, 1.0)), out_dir.join("vis_aug.ppm"))?;
        write_text(&out_dir.join("record.txt"), &record.to_string())?;
        print!("{record}");
        Ok(0)
    })
}
