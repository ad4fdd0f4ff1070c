use crate::backbone::MultiScaleFeatures;
use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::{self, ParamStore};
use crate::rng::RngState;

/// Minimal FPN-style segmentation head.
///
/// Each fused scale is projected to `width` channels by a 1×1 conv,
/// nearest-upsampled to scale-1 resolution and summed; a GELU and a 1×1
/// classifier produce class logits, which are upsampled ×4 to the input size.
#[derive(Clone, Debug)]
pub struct SegHead {
    pub in_channels: [usize; 4],
    pub width: usize,
    pub classes: usize,
}

/// Resolution ratio between scale 1 and the input image.
pub const SCALE1_STRIDE: usize = 4;

impl SegHead {
    pub fn new(in_channels: [usize; 4], width: usize, classes: usize) -> Self {
        Self { in_channels, width, classes }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut RngState) {
        for (i, &c) in self.in_channels.iter().enumerate() {
            store.init_conv(&format!("head.lateral{}", i + 1), c, self.width, 1, rng);
        }
        store.init_conv("head.classifier", self.width, self.classes, 1, rng);
    }

    /// Logits `[K, H, W]` from the four fused maps.
    pub fn forward_maps(&self, g: &mut Graph, store: &ParamStore, fused: [Var; 4]) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for (i, &f) in fused.iter().enumerate() {
            let p = params::conv(g, store, &format!("head.lateral{}", i + 1), f, 1, 0)?;
            let p = if i == 0 { p } else { g.upsample_nearest(p, 1 << i)? };
            acc = Some(match acc {
                None => p,
                Some(a) => g.add(a, p)?,
            });
        }
        let h = g.gelu(acc.expect("four scales"));
        let logits = params::conv(g, store, "head.classifier", h, 1, 0)?;
        g.upsample_nearest(logits, SCALE1_STRIDE)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, features: &MultiScaleFeatures) -> Result<Var> {
        let s = &features.scales;
        self.forward_maps(g, store, [s[0].fused, s[1].fused, s[2].fused, s[3].fused])
    }
}

/// Per-pixel argmax over `[K, H, W]` logits; ties go to the lowest class id.
pub fn argmax_classes(logits: &crate::tensor::Tensor) -> Vec<u8> {
    let s = logits.shape();
    let (k, hw) = (s[0], s[1] * s[2]);
    let d = logits.data();
    (0..hw)
        .map(|p| {
            let mut best = 0;
            for c in 1..k {
                if d[c * hw + p] > d[best * hw + p] {
                    best = c;
                }
            }
            best as u8
        })
        .collect()
}
