use super::attention::multi_head_attention;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{self, ParamStore};
use crate::rng::RngState;

/// Which modality supplies the queries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// Queries from infrared, keys/values from visible.
    XToY,
    YToX,
}

impl Direction {
    fn tag(self) -> &'static str {
        match self {
            Direction::XToY => "xy",
            Direction::YToX => "yx",
        }
    }
}

/// Attention-guided fusion of two `[C, H, W]` feature maps into one.
///
/// Parameters under `prefix`: `{xy,yx}.{q,k,v}` linear `C -> C`, and the
/// merge stack `merge_a` (1×1, `2C -> C`), `merge_b` (1×1), `merge_c`
/// (`merge_kernel`×`merge_kernel`, padding `merge_kernel / 2`).
#[derive(Clone, Debug)]
pub struct Agf {
    pub prefix: String,
    pub channels: usize,
    pub heads: usize,
    /// 3 in the model; 1 only for tests that need a position-wise merge.
    pub merge_kernel: usize,
}

pub struct AgfOutput {
    pub fused: Var,
    /// Per-head attention probabilities for x→y then y→x.
    pub probs: Vec<Var>,
}

impl Agf {
    pub fn new(prefix: impl Into<String>, channels: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !channels.is_multiple_of(heads) {
            return Err(Error::Config(format!("agf.heads = {heads} must divide channel width {channels}")));
        }
        Ok(Self { prefix: prefix.into(), channels, heads, merge_kernel: 3 })
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    fn name(&self, layer: &str) -> String {
        format!("{}.{layer}", self.prefix)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut RngState) {
        let c = self.channels;
        for d in [Direction::XToY, Direction::YToX] {
            for p in ["q", "k", "v"] {
                store.init_linear(&self.name(&format!("{}.{p}", d.tag())), c, c, rng);
            }
        }
        store.init_conv(&self.name("merge_a"), 2 * c, c, 1, rng);
        store.init_conv(&self.name("merge_b"), c, c, 1, rng);
        store.init_conv(&self.name("merge_c"), c, c, self.merge_kernel, rng);
    }

    /// Cross-attention between two `[C, HW]` sequences, returning `[HW_q, C]`.
    pub fn cross_attention(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        q_src: Var,
        kv_src: Var,
        direction: Direction,
    ) -> Result<(Var, Vec<Var>)> {
        for s in [q_src, kv_src] {
            if g.shape(s).len() != 2 || g.shape(s)[0] != self.channels {
                return Err(Error::dim(
                    "cross_attention",
                    format!("expected [{}, L], got {:?}", self.channels, g.shape(s)),
                ));
            }
        }
        let q_tokens = g.transpose(q_src)?;
        let kv_tokens = g.transpose(kv_src)?;
        let t = direction.tag();
        let q = params::linear(g, store, &self.name(&format!("{t}.q")), q_tokens)?;
        let k = params::linear(g, store, &self.name(&format!("{t}.k")), kv_tokens)?;
        let v = params::linear(g, store, &self.name(&format!("{t}.v")), kv_tokens)?;
        let out = multi_head_attention(g, q, k, v, self.heads)?;
        Ok((out.output, out.probs))
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, fx: Var, fy: Var) -> Result<AgfOutput> {
        let shape = g.shape(fx).to_vec();
        if shape != g.shape(fy) || shape.len() != 3 || shape[0] != self.channels {
            return Err(Error::dim(
                "agf",
                format!("inputs {shape:?} and {:?}, expected [{}, H, W]", g.shape(fy), self.channels),
            ));
        }
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let rx = g.reshape(fx, &[c, h * w])?;
        let ry = g.reshape(fy, &[c, h * w])?;
        let (axy, mut probs) = self.cross_attention(g, store, rx, ry, Direction::XToY)?;
        let (ayx, p2) = self.cross_attention(g, store, ry, rx, Direction::YToX)?;
        probs.extend(p2);
        let cat = g.concat(&[axy, ayx], 1)?;
        let cat = g.transpose(cat)?;
        let map = g.reshape(cat, &[2 * c, h, w])?;
        let m = params::conv(g, store, &self.name("merge_a"), map, 1, 0)?;
        let m = g.relu(m);
        let m = params::conv(g, store, &self.name("merge_b"), m, 1, 0)?;
        let fused = params::conv(g, store, &self.name("merge_c"), m, 1, self.merge_kernel / 2)?;
        Ok(AgfOutput { fused, probs })
    }
}
