use std::fmt;
use std::str::FromStr;

use super::Modality;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::ops::PoolMode;
use crate::params::{self, ParamStore};
use crate::rng::RngState;

/// How the spatial and channel branches of the feature enhancement combine.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FemMode {
    /// `F' = F_sxy + F_cx`: both branches read the raw features.
    #[default]
    Parallel,
    /// Channel attention runs on the spatially integrated features.
    Serial,
    ChannelOnly,
    SpatialOnly,
}

impl FromStr for FemMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parallel" => Ok(FemMode::Parallel),
            "serial" => Ok(FemMode::Serial),
            "channel_only" => Ok(FemMode::ChannelOnly),
            "spatial_only" => Ok(FemMode::SpatialOnly),
            other => {
                Err(Error::Config(format!("unknown fem mode `{other}` (parallel|serial|channel_only|spatial_only)")))
            }
        }
    }
}

impl fmt::Display for FemMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FemMode::Parallel => "parallel",
            FemMode::Serial => "serial",
            FemMode::ChannelOnly => "channel_only",
            FemMode::SpatialOnly => "spatial_only",
        })
    }
}

/// Feature enhancement for one scale: cross-modality spatial integration plus
/// intra-modality channel attention.
///
/// Per modality `m` it owns
/// - `{prefix}.{m}.spatial1` 1×1 conv `C -> max(C/8, 1)`
/// - `{prefix}.{m}.spatial2` 1×1 conv `-> 1`
/// - `{prefix}.{m}.channel1` linear `2C -> max(C/4, 1)`
/// - `{prefix}.{m}.channel2` linear `-> C`
#[derive(Clone, Debug)]
pub struct Fem {
    pub prefix: String,
    pub channels: usize,
    pub mode: FemMode,
}

pub const SPATIAL_REDUCTION: usize = 8;
pub const CHANNEL_REDUCTION: usize = 4;

impl Fem {
    pub fn new(prefix: impl Into<String>, channels: usize, mode: FemMode) -> Self {
        Self { prefix: prefix.into(), channels, mode }
    }

    pub fn spatial_hidden(&self) -> usize {
        (self.channels / SPATIAL_REDUCTION).max(1)
    }

    pub fn channel_hidden(&self) -> usize {
        (self.channels / CHANNEL_REDUCTION).max(1)
    }

    fn name(&self, m: Modality, layer: &str) -> String {
        format!("{}.{}.{layer}", self.prefix, m.tag())
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut RngState) {
        let c = self.channels;
        for m in [Modality::Ir, Modality::Vis] {
            store.init_conv(&self.name(m, "spatial1"), c, self.spatial_hidden(), 1, rng);
            store.init_conv(&self.name(m, "spatial2"), self.spatial_hidden(), 1, 1, rng);
            store.init_linear(&self.name(m, "channel1"), 2 * c, self.channel_hidden(), rng);
            store.init_linear(&self.name(m, "channel2"), self.channel_hidden(), c, rng);
        }
    }

    fn check(&self, g: &Graph, f: Var) -> Result<()> {
        let s = g.shape(f);
        if s.len() != 3 || s[0] != self.channels {
            return Err(Error::dim("fem", format!("expected [{}, H, W], got {s:?}", self.channels)));
        }
        Ok(())
    }

    /// `sigmoid(conv(relu(conv(F))))`, shape `[1, H, W]`.
    pub fn spatial_attention(&self, g: &mut Graph, store: &ParamStore, f: Var, m: Modality) -> Result<Var> {
        self.check(g, f)?;
        let h = params::conv(g, store, &self.name(m, "spatial1"), f, 1, 0)?;
        let h = g.relu(h);
        let s = params::conv(g, store, &self.name(m, "spatial2"), h, 1, 0)?;
        Ok(g.sigmoid(s))
    }

    /// Each modality receives the other's spatially re-weighted features:
    /// returns `(F_x + F_y ⊙ W_sy, F_y + F_x ⊙ W_sx)`.
    pub fn cross_spatial_integration(&self, g: &mut Graph, store: &ParamStore, fx: Var, fy: Var) -> Result<(Var, Var)> {
        if g.shape(fx) != g.shape(fy) {
            return Err(Error::dim("fem", format!("modality shapes differ: {:?} vs {:?}", g.shape(fx), g.shape(fy))));
        }
        let wx = self.spatial_attention(g, store, fx, Modality::Ir)?;
        let wy = self.spatial_attention(g, store, fy, Modality::Vis)?;
        let sx = g.mul(fx, wx)?;
        let sy = g.mul(fy, wy)?;
        Ok((g.add(fx, sy)?, g.add(fy, sx)?))
    }

    /// Channel weights `[C, 1, 1]` from concatenated avg/max descriptors.
    pub fn channel_attention(&self, g: &mut Graph, store: &ParamStore, f: Var, m: Modality) -> Result<Var> {
        self.check(g, f)?;
        let c = self.channels;
        let avg = g.adaptive_pool(f, PoolMode::Avg, &[1, 1])?;
        let max = g.adaptive_pool(f, PoolMode::Max, &[1, 1])?;
        let desc = g.concat(&[avg, max], 0)?;
        let desc = g.reshape(desc, &[1, 2 * c])?;
        let h = params::linear(g, store, &self.name(m, "channel1"), desc)?;
        let h = g.relu(h);
        let w = params::linear(g, store, &self.name(m, "channel2"), h)?;
        let w = g.sigmoid(w);
        g.reshape(w, &[c, 1, 1])
    }

    /// `F ⊙ W_c` for one modality.
    pub fn channel_branch(&self, g: &mut Graph, store: &ParamStore, f: Var, m: Modality) -> Result<Var> {
        let w = self.channel_attention(g, store, f, m)?;
        g.mul(f, w)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, fx: Var, fy: Var) -> Result<(Var, Var)> {
        self.check(g, fx)?;
        self.check(g, fy)?;
        match self.mode {
            FemMode::Parallel => {
                let (sxy, syx) = self.cross_spatial_integration(g, store, fx, fy)?;
                let cx = self.channel_branch(g, store, fx, Modality::Ir)?;
                let cy = self.channel_branch(g, store, fy, Modality::Vis)?;
                Ok((g.add(sxy, cx)?, g.add(syx, cy)?))
            }
            FemMode::Serial => {
                let (sxy, syx) = self.cross_spatial_integration(g, store, fx, fy)?;
                let cx = self.channel_branch(g, store, sxy, Modality::Ir)?;
                let cy = self.channel_branch(g, store, syx, Modality::Vis)?;
                Ok((g.add(sxy, cx)?, g.add(syx, cy)?))
            }
            FemMode::ChannelOnly => {
                let cx = self.channel_branch(g, store, fx, Modality::Ir)?;
                let cy = self.channel_branch(g, store, fy, Modality::Vis)?;
                Ok((g.add(fx, cx)?, g.add(fy, cy)?))
            }
            // the integration already carries the identity term
            FemMode::SpatialOnly => self.cross_spatial_integration(g, store, fx, fy),
        }
    }
}
