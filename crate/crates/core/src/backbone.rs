//! Toy dual-branch encoder producing four feature scales per modality,
//! with feature enhancement between stages, token enhancement inside the
//! transformer stage, and attention-guided fusion at every scale.
//!
//! Per modality:
//!
//! ```text
//! stage1  conv3x3/2 (3 -> w/2), GELU, conv3x3/2 (-> w), GELU     stride 4
//! stage2  conv3x3/2 (w -> 2w), GELU                              stride 8
//! stage3  conv3x3/2 (2w -> 4w) token embed, `depth` pre-norm
//!         transformer layers                                     stride 16
//! stage4  conv3x3/2 (4w -> 8w), GELU                             stride 32
//! ```

use crate::config::{FusionConfig, ModelConfig};
use crate::error::{Error, Result};
use crate::fusion::{multi_head_attention, Agf, Fem, Modality, Tem};
use crate::graph::{Graph, Var};
use crate::params::{self, ParamStore};
use crate::rng::RngState;
use crate::tensor::Tensor;

pub const LN_EPS: f64 = 1e-5;

/// Which image each branch should see when a modality is unavailable.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Missing {
    Ir,
    Vis,
    #[default]
    None,
}

impl std::str::FromStr for Missing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ir" => Ok(Missing::Ir),
            "vis" => Ok(Missing::Vis),
            "none" => Ok(Missing::None),
            other => Err(Error::Config(format!("unknown missing modality `{other}` (ir|vis|none)"))),
        }
    }
}

impl std::fmt::Display for Missing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Missing::Ir => "ir",
            Missing::Vis => "vis",
            Missing::None => "none",
        })
    }
}

/// Replaces the absent modality's image with the present one.
pub fn substitute_missing(x: &Tensor, y: &Tensor, missing: Missing) -> (Tensor, Tensor) {
    match missing {
        Missing::Ir => (y.clone(), y.clone()),
        Missing::Vis => (x.clone(), x.clone()),
        Missing::None => (x.clone(), y.clone()),
    }
}

/// Features at one scale: the (enhanced) per-modality maps and their fusion.
#[derive(Clone, Copy, Debug)]
pub struct ScaleFeatures {
    pub x: Var,
    pub y: Var,
    pub fused: Var,
}

#[derive(Clone, Debug)]
pub struct MultiScaleFeatures {
    pub scales: [ScaleFeatures; 4],
    /// 1-based transformer layers after which token enhancement ran.
    pub tem_calls: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Backbone {
    pub model: ModelConfig,
    pub fusion: FusionConfig,
    fems: Vec<Fem>,
    tem: Tem,
    agfs: Vec<Agf>,
}

fn branch(m: Modality) -> &'static str {
    match m {
        Modality::Ir => "ir",
        Modality::Vis => "vis",
    }
}

impl Backbone {
    pub fn new(model: &ModelConfig, fusion: &FusionConfig) -> Result<Self> {
        let widths = model.widths();
        let fems = (0..3).map(|i| Fem::new(format!("fem{}", i + 1), widths[i], fusion.fem_mode)).collect();
        let tem = Tem::new("tem", widths[2], fusion.tem_adapters);
        let agfs =
            (0..4).map(|i| Agf::new(format!("agf{}", i + 1), widths[i], fusion.agf_heads)).collect::<Result<_>>()?;
        for c in widths {
            if model.attn_heads == 0 || c % model.attn_heads != 0 {
                return Err(Error::Config(format!("model.attn_heads = {} must divide width {c}", model.attn_heads)));
            }
        }
        Ok(Self { model: model.clone(), fusion: fusion.clone(), fems, tem, agfs })
    }

    pub fn widths(&self) -> [usize; 4] {
        self.model.widths()
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut RngState) {
        let [w1, w2, w3, w4] = self.widths();
        let hidden = w3 * self.model.mlp_ratio;
        for m in [Modality::Ir, Modality::Vis] {
            let b = branch(m);
            store.init_conv(&format!("{b}.stage1.conv1"), 3, (w1 / 2).max(1), 3, rng);
            store.init_conv(&format!("{b}.stage1.conv2"), (w1 / 2).max(1), w1, 3, rng);
            store.init_conv(&format!("{b}.stage2.conv"), w1, w2, 3, rng);
            store.init_conv(&format!("{b}.stage3.embed"), w2, w3, 3, rng);
            for l in 1..=self.model.depth {
                let p = format!("{b}.stage3.layer{l}");
                store.init_norm(&format!("{p}.norm1"), w3);
                for proj in ["q", "k", "v", "out"] {
                    store.init_linear(&format!("{p}.attn.{proj}"), w3, w3, rng);
                }
                store.init_norm(&format!("{p}.norm2"), w3);
                store.init_linear(&format!("{p}.mlp1"), w3, hidden, rng);
                store.init_linear(&format!("{p}.mlp2"), hidden, w3, rng);
            }
            store.init_conv(&format!("{b}.stage4.conv"), w3, w4, 3, rng);
        }
        if self.fusion.fem_enabled {
            self.fems.iter().for_each(|f| f.init(store, rng));
        }
        if self.fusion.tem_enabled {
            self.tem.init(store, rng);
        }
        if self.fusion.agf_enabled {
            self.agfs.iter().for_each(|a| a.init(store, rng));
        }
    }

    /// Rejects image sizes the stride schedule cannot handle.
    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        match shape {
            &[3, h, w] if h > 0 && w > 0 && h % ModelConfig::STRIDE == 0 && w % ModelConfig::STRIDE == 0 => Ok(()),
            &[3, h, w] => Err(Error::Config(format!("input {h}x{w} is not divisible by {}", ModelConfig::STRIDE))),
            s => Err(Error::dim("encoder", format!("images must be [3,H,W], got {s:?}"))),
        }
    }

    fn down(g: &mut Graph, store: &ParamStore, name: &str, x: Var) -> Result<Var> {
        let y = params::conv(g, store, name, x, 2, 1)?;
        Ok(g.gelu(y))
    }

    fn transformer_layer(&self, g: &mut Graph, store: &ParamStore, prefix: &str, t: Var) -> Result<Var> {
        let h = params::layer_norm(g, store, &format!("{prefix}.norm1"), t, LN_EPS)?;
        let q = params::linear(g, store, &format!("{prefix}.attn.q"), h)?;
        let k = params::linear(g, store, &format!("{prefix}.attn.k"), h)?;
        let v = params::linear(g, store, &format!("{prefix}.attn.v"), h)?;
        let a = multi_head_attention(g, q, k, v, self.model.attn_heads)?;
        let o = params::linear(g, store, &format!("{prefix}.attn.out"), a.output)?;
        let t = g.add(t, o)?;
        let h = params::layer_norm(g, store, &format!("{prefix}.norm2"), t, LN_EPS)?;
        let h = params::linear(g, store, &format!("{prefix}.mlp1"), h)?;
        let h = g.gelu(h);
        let h = params::linear(g, store, &format!("{prefix}.mlp2"), h)?;
        g.add(t, h)
    }

    fn enhance(&self, g: &mut Graph, store: &ParamStore, scale: usize, x: Var, y: Var) -> Result<(Var, Var)> {
        if self.fusion.fem_enabled {
            self.fems[scale].forward(g, store, x, y)
        } else {
            Ok((x, y))
        }
    }

    fn fuse(&self, g: &mut Graph, store: &ParamStore, scale: usize, x: Var, y: Var) -> Result<ScaleFeatures> {
        let fused =
            if self.fusion.agf_enabled { self.agfs[scale].forward(g, store, x, y)?.fused } else { g.add(x, y)? };
        Ok(ScaleFeatures { x, y, fused })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x_img: Var, y_img: Var) -> Result<MultiScaleFeatures> {
        self.check_input(g.shape(x_img))?;
        if g.shape(x_img) != g.shape(y_img) {
            return Err(Error::dim("encoder", format!("{:?} vs {:?}", g.shape(x_img), g.shape(y_img))));
        }
        let w3 = self.widths()[2];

        // stage 1
        let mut f = [x_img, y_img];
        for (i, m) in [Modality::Ir, Modality::Vis].into_iter().enumerate() {
            let b = branch(m);
            let h = Self::down(g, store, &format!("{b}.stage1.conv1"), f[i])?;
            f[i] = Self::down(g, store, &format!("{b}.stage1.conv2"), h)?;
        }
        let (x1, y1) = self.enhance(g, store, 0, f[0], f[1])?;
        let s1 = self.fuse(g, store, 0, x1, y1)?;

        // stage 2
        let mut f = [x1, y1];
        for (i, m) in [Modality::Ir, Modality::Vis].into_iter().enumerate() {
            f[i] = Self::down(g, store, &format!("{}.stage2.conv", branch(m)), f[i])?;
        }
        let (x2, y2) = self.enhance(g, store, 1, f[0], f[1])?;
        let s2 = self.fuse(g, store, 1, x2, y2)?;

        // stage 3: tokens
        let mut tokens = [x2, y2];
        let mut grid = (0, 0);
        for (i, m) in [Modality::Ir, Modality::Vis].into_iter().enumerate() {
            let e = params::conv(g, store, &format!("{}.stage3.embed", branch(m)), tokens[i], 2, 1)?;
            let s = g.shape(e).to_vec();
            grid = (s[1], s[2]);
            let flat = g.reshape(e, &[w3, s[1] * s[2]])?;
            tokens[i] = g.transpose(flat)?;
        }
        let mut tem_calls = Vec::new();
        for l in 1..=self.model.depth {
            for (i, m) in [Modality::Ir, Modality::Vis].into_iter().enumerate() {
                let prefix = format!("{}.stage3.layer{l}", branch(m));
                tokens[i] = self.transformer_layer(g, store, &prefix, tokens[i])?;
            }
            if self.fusion.tem_enabled && l % self.model.tem_every == 0 {
                let out = self.tem.forward(g, store, tokens[0], tokens[1])?;
                tokens = [out.x, out.y];
                tem_calls.push(l);
            }
        }
        let mut maps = [x2, y2];
        for i in 0..2 {
            let t = g.transpose(tokens[i])?;
            maps[i] = g.reshape(t, &[w3, grid.0, grid.1])?;
        }
        let (x3, y3) = self.enhance(g, store, 2, maps[0], maps[1])?;
        let s3 = self.fuse(g, store, 2, x3, y3)?;

        // stage 4
        let x4 = Self::down(g, store, "ir.stage4.conv", x3)?;
        let y4 = Self::down(g, store, "vis.stage4.conv", y3)?;
        let s4 = self.fuse(g, store, 3, x4, y4)?;

        Ok(MultiScaleFeatures { scales: [s1, s2, s3, s4], tem_calls })
    }
}

/// Per-pixel maximum over channels, min-max normalized to `[0, 1]`; a
/// `[1, H, W]` image suitable for writing as a grayscale map.
pub fn project_max(feature: &Tensor) -> Result<Tensor> {
    let &[c, h, w] = feature.shape() else {
        return Err(Error::dim("project_max", format!("expected [C,H,W], got {:?}", feature.shape())));
    };
    let d = feature.data();
    let mut out: Vec<f64> =
        (0..h * w).map(|p| (0..c).map(|ch| d[ch * h * w + p]).fold(f64::NEG_INFINITY, f64::max)).collect();
    let lo = out.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    out.iter_mut().for_each(|v| *v = if span > 0.0 { (*v - lo) / span } else { 0.0 });
    Tensor::new(&[1, h, w], out)
}
