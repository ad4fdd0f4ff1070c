use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::ops::PoolMode;
use crate::params::{self, ParamStore};
use crate::rng::RngState;

pub const LN_EPS: f64 = 1e-5;

/// Token enhancement: merges both modalities' tokens, refines the merged
/// representation with a routed mixture of bottleneck adapters, and gates
/// every token of each modality with a sigmoid importance prompt.
///
/// Parameters under `prefix`:
/// - `norm` layer norm over `2C`
/// - `reduce` linear `2C -> C1` (here `C1 = C`)
/// - `router` linear `C1 -> K`
/// - `adapter{k}.down` / `adapter{k}.up` linear `C1 -> C1/4 -> C1`
#[derive(Clone, Debug)]
pub struct Tem {
    pub prefix: String,
    pub channels: usize,
    /// Number of adapters in the mixture; 0 turns the mixture into identity.
    pub adapters: usize,
}

pub struct TemOutput {
    pub x: Var,
    pub y: Var,
    /// `[N, 1]` gates for the infrared tokens.
    pub prompt_x: Var,
    pub prompt_y: Var,
    /// `[N, K]` router probabilities, when adapters are enabled.
    pub router: Option<Var>,
    /// The merged representation after the adapter mixture, `[N, C1]`.
    pub merged: Var,
}

impl Tem {
    pub fn new(prefix: impl Into<String>, channels: usize, adapters: usize) -> Self {
        Self { prefix: prefix.into(), channels, adapters }
    }

    pub fn reduced(&self) -> usize {
        self.channels
    }

    pub fn adapter_hidden(&self) -> usize {
        (self.reduced() / 4).max(1)
    }

    fn name(&self, layer: &str) -> String {
        format!("{}.{layer}", self.prefix)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut RngState) {
        let (c, c1) = (self.channels, self.reduced());
        store.init_norm(&self.name("norm"), 2 * c);
        store.init_linear(&self.name("reduce"), 2 * c, c1, rng);
        if self.adapters > 0 {
            store.init_linear(&self.name("router"), c1, self.adapters, rng);
            for k in 0..self.adapters {
                store.init_linear(&self.name(&format!("adapter{k}.down")), c1, self.adapter_hidden(), rng);
                store.init_linear(&self.name(&format!("adapter{k}.up")), self.adapter_hidden(), c1, rng);
            }
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, tx: Var, ty: Var) -> Result<TemOutput> {
        let (sx, sy) = (g.shape(tx), g.shape(ty));
        if sx != sy || sx.len() != 2 || sx[1] != self.channels {
            return Err(Error::dim("tem", format!("tokens {sx:?} and {sy:?}, expected [N, {}] each", self.channels)));
        }
        if self.reduced() < 2 {
            return Err(Error::Config("token enhancement needs at least 2 channels".into()));
        }
        let n = sx[0];
        let cat = g.concat(&[tx, ty], 1)?;
        let normed = params::layer_norm(g, store, &self.name("norm"), cat, LN_EPS)?;
        let mut phi = params::linear(g, store, &self.name("reduce"), normed)?;

        let mut router = None;
        if self.adapters > 0 {
            let logits = params::linear(g, store, &self.name("router"), phi)?;
            let weights = g.softmax_rows(logits)?;
            let mut mix: Option<Var> = None;
            for k in 0..self.adapters {
                let h = params::linear(g, store, &self.name(&format!("adapter{k}.down")), phi)?;
                let h = g.relu(h);
                let a = params::linear(g, store, &self.name(&format!("adapter{k}.up")), h)?;
                let wk = g.narrow(weights, 1, k, 1)?;
                let term = g.mul(a, wk)?;
                mix = Some(match mix {
                    None => term,
                    Some(acc) => g.add(acc, term)?,
                });
            }
            phi = g.add(phi, mix.expect("at least one adapter"))?;
            router = Some(weights);
        }

        let pooled = g.adaptive_pool(phi, PoolMode::Avg, &[2])?;
        let prompts = g.sigmoid(pooled);
        let prompt_x = g.narrow(prompts, 1, 0, 1)?;
        let prompt_y = g.narrow(prompts, 1, 1, 1)?;
        debug_assert_eq!(g.shape(prompt_x), &[n, 1]);
        let x = g.mul(tx, prompt_x)?;
        let y = g.mul(ty, prompt_y)?;
        Ok(TemOutput { x, y, prompt_x, prompt_y, router, merged: phi })
    }
}
