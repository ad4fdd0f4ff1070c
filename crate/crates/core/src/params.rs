//! Named parameter storage and initialization.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Name-keyed parameter tensors, iterated in sorted name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Option<Tensor> {
        self.tensors.insert(name.into(), t)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors.get(name).ok_or_else(|| Error::Invalid(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Registers `name` on the graph as a trainable leaf.
    pub fn bind(&self, g: &mut Graph, name: &str) -> Result<Var> {
        Ok(g.param(name, self.get(name)?))
    }

    /// Adds all entries of `other`, failing on a duplicate name.
    pub fn extend(&mut self, other: ParamStore) -> Result<()> {
        for (k, v) in other.tensors {
            if self.tensors.contains_key(&k) {
                return Err(Error::Invalid(format!("duplicate parameter `{k}`")));
            }
            self.tensors.insert(k, v);
        }
        Ok(())
    }

    /// Weight `[out, in, k, k]` drawn from `U(±sqrt(3 / fan_in))` (unit
    /// variance gain) and zero bias.
    pub fn init_conv(&mut self, prefix: &str, c_in: usize, c_out: usize, k: usize, rng: &mut RngState) {
        let bound = (3.0 / (c_in * k * k) as f64).sqrt();
        self.insert(format!("{prefix}.weight"), Tensor::uniform(&[c_out, c_in, k, k], -bound, bound, rng));
        self.insert(format!("{prefix}.bias"), Tensor::zeros(&[c_out]));
    }

    /// Weight `[out, in]` drawn from `U(±sqrt(3 / d_in))` and zero bias.
    pub fn init_linear(&mut self, prefix: &str, d_in: usize, d_out: usize, rng: &mut RngState) {
        let bound = (3.0 / d_in as f64).sqrt();
        self.insert(format!("{prefix}.weight"), Tensor::uniform(&[d_out, d_in], -bound, bound, rng));
        self.insert(format!("{prefix}.bias"), Tensor::zeros(&[d_out]));
    }

    /// Unit gain and zero shift for a layer norm.
    pub fn init_norm(&mut self, prefix: &str, width: usize) {
        self.insert(format!("{prefix}.gamma"), Tensor::ones(&[width]));
        self.insert(format!("{prefix}.beta"), Tensor::zeros(&[width]));
    }

    /// Replaces every bias tensor (names ending in `.bias` or `.beta`) with
    /// random values; tests use this to avoid the all-zero starting point.
    pub fn randomize_biases(&mut self, scale: f64, rng: &mut RngState) {
        for (name, t) in self.tensors.iter_mut() {
            if name.ends_with(".bias") || name.ends_with(".beta") {
                *t = Tensor::uniform(t.shape(), -scale, scale, rng);
            }
        }
    }

    /// Sets every bias-like tensor to zero.
    pub fn zero_biases(&mut self) {
        for (name, t) in self.tensors.iter_mut() {
            if name.ends_with(".bias") || name.ends_with(".beta") {
                t.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }
}

/// Conv helper: binds `{prefix}.weight` / `{prefix}.bias` and applies them.
pub(crate) fn conv(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    x: Var,
    stride: usize,
    padding: usize,
) -> Result<Var> {
    let w = store.bind(g, &format!("{prefix}.weight"))?;
    let b = store.bind(g, &format!("{prefix}.bias"))?;
    g.conv2d(x, w, b, stride, padding)
}

pub(crate) fn linear(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let w = store.bind(g, &format!("{prefix}.weight"))?;
    let b = store.bind(g, &format!("{prefix}.bias"))?;
    g.linear(x, w, b)
}

pub(crate) fn layer_norm(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var, eps: f64) -> Result<Var> {
    let gamma = store.bind(g, &format!("{prefix}.gamma"))?;
    let beta = store.bind(g, &format!("{prefix}.beta"))?;
    g.layer_norm(x, gamma, beta, eps)
}
