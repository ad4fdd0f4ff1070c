//! Single-stream toy training.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::augment::cma_apply;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::rng::{streams, RngState};
use crate::tensor::Tensor;

use super::data::SyntheticScene;
use super::model::Model;
use super::optim::AdamW;

/// Batch-mean loss and batch-mean gradients for the given scenes, which are
/// augmented first when `aug_rng` is set. Per-scene passes run in parallel;
/// the reduction is sequential in batch order.
pub fn batch_loss_and_grads(
    model: &Model,
    store: &ParamStore,
    batch: &[&SyntheticScene],
    cfg: &Config,
    aug_rng: Option<&RngState>,
) -> Result<(f64, BTreeMap<String, Tensor>)> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let per_scene: Vec<(f64, BTreeMap<String, Tensor>)> = batch
        .par_iter()
        .enumerate()
        .map(|(slot, scene)| {
            let (x, y) = match aug_rng {
                Some(rng) if cfg.aug.enabled => {
                    let (x, y, _) = cma_apply(&scene.ir, &scene.vis, &cfg.aug, &rng.fork(slot as u64))?;
                    (x, y)
                }
                _ => (scene.ir.clone(), scene.vis.clone()),
            };
            model.loss_and_grads(store, &x, &y, &scene.mask)
        })
        .collect::<Result<_>>()?;

    let scale = 1.0 / batch.len() as f64;
    let mut iter = per_scene.into_iter();
    let (mut loss, mut grads) = iter.next().expect("non-empty batch");
    for (l, g) in iter {
        loss += l;
        for (name, t) in g {
            let acc = grads.get_mut(&name).expect("same parameters per scene");
            acc.data_mut().iter_mut().zip(t.data()).for_each(|(a, b)| *a += b);
        }
    }
    grads.values_mut().for_each(|t| t.data_mut().iter_mut().for_each(|v| *v *= scale));
    Ok((loss * scale, grads))
}

/// One optimizer update on `batch`; returns the pre-update batch loss.
pub fn train_step(
    model: &Model,
    store: &mut ParamStore,
    opt: &mut AdamW,
    batch: &[&SyntheticScene],
    cfg: &Config,
    aug_rng: Option<&RngState>,
) -> Result<f64> {
    let (loss, grads) = batch_loss_and_grads(model, store, batch, cfg, aug_rng)?;
    opt.step(store, &grads);
    if let Some((name, _)) = store.iter().find(|(_, t)| !t.is_finite()) {
        return Err(Error::NonFinite(format!("parameter `{name}` after step {}", opt.steps_taken())));
    }
    Ok(loss)
}

/// Runs `steps` updates over `scenes` with reshuffling each epoch and returns
/// the loss curve. `on_step` sees the 1-based step and its loss.
pub fn train(
    model: &Model,
    store: &mut ParamStore,
    scenes: &[SyntheticScene],
    cfg: &Config,
    steps: usize,
    seed: u64,
    mut on_step: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    if scenes.is_empty() {
        return Err(Error::Invalid("no training scenes".into()));
    }
    let mut opt = AdamW::new((&cfg.train).into());
    let shuffle_root = RngState::at(seed, streams::SHUFFLE, 0);
    let aug_root = RngState::at(seed, streams::AUGMENT, 0);
    let batch = cfg.train.batch.min(scenes.len());

    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut epoch = 0u64;
    let mut losses = Vec::with_capacity(steps);
    for step in 1..=steps {
        let mut picked = Vec::with_capacity(batch);
        while picked.len() < batch {
            if cursor == order.len() {
                order = (0..scenes.len()).collect();
                shuffle_root.fork(epoch).shuffle(&mut order);
                epoch += 1;
                cursor = 0;
            }
            picked.push(&scenes[order[cursor]]);
            cursor += 1;
        }
        let aug = aug_root.fork(step as u64);
        let loss = train_step(model, store, &mut opt, &picked, cfg, Some(&aug))?;
        on_step(step, loss);
        losses.push(loss);
    }
    Ok(losses)
}

/// `step,loss` rows with nine decimals.
pub fn loss_curve_csv(losses: &[f64]) -> String {
    let mut s = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        writeln!(s, "{},{l:.9}", i + 1).unwrap();
    }
    s
}
