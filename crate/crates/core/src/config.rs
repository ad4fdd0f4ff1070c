//! Run configuration. The text format lives in [`crate::io::config`].

use crate::augment::AugConfig;
use crate::error::{Error, Result};
use crate::fusion::FemMode;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Stage-1 width; stages 2–4 use 2×, 4×, 8×.
    pub width: usize,
    /// Number of transformer layers in stage 3.
    pub depth: usize,
    /// Token enhancement follows every layer whose 1-based index is a multiple of this.
    pub tem_every: usize,
    pub attn_heads: usize,
    pub mlp_ratio: usize,
    pub classes: usize,
    pub head_width: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { width: 32, depth: 9, tem_every: 3, attn_heads: 4, mlp_ratio: 2, classes: 4, head_width: 64 }
    }
}

impl ModelConfig {
    pub fn widths(&self) -> [usize; 4] {
        let w = self.width;
        [w, 2 * w, 4 * w, 8 * w]
    }

    /// Input sides must be multiples of this.
    pub const STRIDE: usize = 32;

    pub fn tem_layers(&self) -> Vec<usize> {
        (1..=self.depth).filter(|j| j % self.tem_every == 0).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionConfig {
    pub fem_enabled: bool,
    pub fem_mode: FemMode,
    pub tem_enabled: bool,
    /// Adapters in the token-enhancement mixture; 0 disables the mixture.
    pub tem_adapters: usize,
    pub agf_enabled: bool,
    pub agf_heads: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            fem_enabled: true,
            fem_mode: FemMode::Parallel,
            tem_enabled: true,
            tem_adapters: 2,
            agf_enabled: true,
            agf_heads: 4,
        }
    }
}

impl FusionConfig {
    /// Everything off: per-modality features are fused by summation.
    pub fn sum_baseline() -> Self {
        Self { fem_enabled: false, tem_enabled: false, agf_enabled: false, ..Self::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 1e-4, weight_decay: 0.05, beta1: 0.9, beta2: 0.999, eps: 1e-8, steps: 200, batch: 2, seed: 7 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    /// Side length of the square synthetic scenes.
    pub size: usize,
    pub train_scenes: usize,
    pub eval_scenes: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { size: 64, train_scenes: 64, eval_scenes: 16 }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    pub model: ModelConfig,
    pub fusion: FusionConfig,
    pub aug: AugConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if m.width < 2 || m.depth == 0 || m.tem_every == 0 || m.mlp_ratio == 0 || m.head_width == 0 {
            return Err(Error::Config("model sizes must be positive (model.width >= 2)".into()));
        }
        if m.classes < 2 || m.classes > 255 {
            return Err(Error::Config(format!("model.classes = {} must be in 2..=255", m.classes)));
        }
        for (key, heads) in [("agf.heads", self.fusion.agf_heads), ("model.attn_heads", m.attn_heads)] {
            for c in m.widths() {
                if heads == 0 || c % heads != 0 {
                    return Err(Error::Config(format!("{key} = {heads} must divide channel width {c}")));
                }
            }
        }
        self.aug.validate()?;
        let t = &self.train;
        if !(t.lr > 0.0) || !(t.weight_decay >= 0.0) || !(t.eps > 0.0) {
            return Err(Error::Config(
                "train.lr and train.eps must be positive, train.weight_decay non-negative".into(),
            ));
        }
        if !(0.0..1.0).contains(&t.beta1) || !(0.0..1.0).contains(&t.beta2) {
            return Err(Error::Config("train.beta1/beta2 must lie in [0, 1)".into()));
        }
        if t.batch == 0 {
            return Err(Error::Config("train.batch must be positive".into()));
        }
        let d = &self.data;
        if d.size == 0 || !d.size.is_multiple_of(ModelConfig::STRIDE) {
            return Err(Error::Config(format!(
                "data.size = {} must be a positive multiple of {}",
                d.size,
                ModelConfig::STRIDE
            )));
        }
        Ok(())
    }
}
