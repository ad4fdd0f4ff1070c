use std::collections::BTreeMap;

use crate::backbone::{Backbone, MultiScaleFeatures};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::ParamStore;
use crate::rng::{streams, RngState};
use crate::tensor::Tensor;

use super::head::{argmax_classes, SegHead};

/// Encoder plus segmentation head.
#[derive(Clone, Debug)]
pub struct Model {
    pub backbone: Backbone,
    pub head: SegHead,
}

/// A recorded forward pass.
pub struct Forward {
    pub graph: Graph,
    pub features: MultiScaleFeatures,
    pub logits: Var,
}

impl Model {
    pub fn new(cfg: &Config) -> Result<Self> {
        let backbone = Backbone::new(&cfg.model, &cfg.fusion)?;
        let head = SegHead::new(backbone.widths(), cfg.model.head_width, cfg.model.classes);
        Ok(Self { backbone, head })
    }

    pub fn classes(&self) -> usize {
        self.head.classes
    }

    /// Fresh parameters drawn from the init stream of `seed`.
    pub fn init_params(&self, seed: u64) -> ParamStore {
        let root = RngState::at(seed, streams::INIT, 0);
        let mut store = ParamStore::new();
        self.backbone.init(&mut store, &mut root.fork(0));
        self.head.init(&mut store, &mut root.fork(1));
        store
    }

    /// Checks that `store` holds exactly this model's parameters with the
    /// expected shapes, e.g. after loading a checkpoint.
    pub fn check_params(&self, store: &ParamStore) -> Result<()> {
        let expected = self.init_params(0);
        for (name, t) in expected.iter() {
            let got = store
                .get(name)
                .map_err(|_| Error::dim("checkpoint", format!("parameter `{name}` missing for this config")))?;
            if got.shape() != t.shape() {
                return Err(Error::dim(
                    "checkpoint",
                    format!("`{name}` has shape {:?}, config expects {:?}", got.shape(), t.shape()),
                ));
            }
        }
        if let Some(extra) = store.names().find(|n| !expected.contains(n)) {
            return Err(Error::dim("checkpoint", format!("unexpected parameter `{extra}`")));
        }
        Ok(())
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor, y: &Tensor) -> Result<Forward> {
        let mut graph = Graph::new();
        let xv = graph.constant(x.clone());
        let yv = graph.constant(y.clone());
        let features = self.backbone.forward(&mut graph, store, xv, yv)?;
        let logits = self.head.forward(&mut graph, store, &features)?;
        Ok(Forward { graph, features, logits })
    }

    /// Mean cross-entropy of one scene and the gradient of every parameter.
    pub fn loss_and_grads(
        &self,
        store: &ParamStore,
        x: &Tensor,
        y: &Tensor,
        mask: &[u8],
    ) -> Result<(f64, BTreeMap<String, Tensor>)> {
        let Forward { mut graph, logits, .. } = self.forward(store, x, y)?;
        let loss = graph.cross_entropy(logits, mask)?;
        let value = graph.value(loss).data()[0];
        if !value.is_finite() {
            let culprit = graph.first_non_finite().unwrap_or_else(|| "loss".into());
            return Err(Error::NonFinite(format!("loss is {value}; first non-finite tensor: {culprit}")));
        }
        let grads = graph.backward(loss)?.into_named();
        if let Some((name, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of parameter `{name}`")));
        }
        Ok((value, grads))
    }

    /// Logits `[K, H, W]` and their per-pixel argmax.
    pub fn predict(&self, store: &ParamStore, x: &Tensor, y: &Tensor) -> Result<(Tensor, Vec<u8>)> {
        let f = self.forward(store, x, y)?;
        let logits = f.graph.value(f.logits).clone();
        let classes = argmax_classes(&logits);
        Ok((logits, classes))
    }
}
