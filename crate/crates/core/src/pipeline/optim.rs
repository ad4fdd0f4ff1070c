//! Adam with decoupled weight decay.

use std::collections::BTreeMap;

use crate::config::TrainConfig;
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl From<&TrainConfig> for AdamWConfig {
    fn from(t: &TrainConfig) -> Self {
        Self { lr: t.lr, weight_decay: t.weight_decay, beta1: t.beta1, beta2: t.beta2, eps: t.eps }
    }
}

#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self { config, step: 0, first: BTreeMap::new(), second: BTreeMap::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every parameter in `store`. Parameters without an entry
    /// in `grads` are treated as having zero gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &BTreeMap<String, Tensor>) {
        self.step += 1;
        let AdamWConfig { lr, weight_decay, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (name, p) in store.iter_mut() {
            let n = p.len();
            let m = self.first.entry(name.to_owned()).or_insert_with(|| vec![0.0; n]);
            let v = self.second.entry(name.to_owned()).or_insert_with(|| vec![0.0; n]);
            let g = grads.get(name).map(Tensor::data);
            for i in 0..n {
                let gi = g.map_or(0.0, |g| g[i]);
                let pi = &mut p.data_mut()[i];
                *pi *= 1.0 - lr * weight_decay;
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                *pi -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
