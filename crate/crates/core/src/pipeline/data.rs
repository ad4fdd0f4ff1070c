//! Synthetic paired infrared/visible scenes.
//!
//! Background is class 0. Objects are axis-aligned rectangles on a 4-pixel
//! lattice:
//!
//! | class | infrared        | visible                 |
//! |-------|-----------------|-------------------------|
//! | 1     | hot             | same as background      |
//! | 2     | same as background | saturated red        |
//! | 3     | hot             | saturated blue          |
//!
//! so class 1 is only separable with the infrared image, class 2 only with
//! the visible one, and class 3 versus classes 1 and 2 needs both.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io::pnm;
use crate::rng::{streams, RngState};
use crate::tensor::Tensor;

pub const CLASSES: usize = 4;
const LATTICE: usize = 4;
const NOISE: f64 = 0.04;
const IR_BACKGROUND: f64 = 0.25;
const IR_HOT: f64 = 0.8;
const NIGHT_GAIN: f64 = 0.45;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub name: String,
    /// `[3, H, W]` in `[0, 1]`.
    pub ir: Tensor,
    /// `[3, H, W]` in `[0, 1]`.
    pub vis: Tensor,
    /// `H * W` class ids, row-major.
    pub mask: Vec<u8>,
}

impl SyntheticScene {
    pub fn size(&self) -> (usize, usize) {
        let s = self.ir.shape();
        (s[1], s[2])
    }

    pub fn classes_present(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        self.mask.iter().for_each(|&c| seen[c as usize] = true);
        (0..=255u8).filter(|&c| seen[c as usize]).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    fn label(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Eval => 1,
        }
    }

    fn prefix(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "eval" => Ok(Split::Eval),
            other => Err(Error::Config(format!("unknown split `{other}` (train|eval)"))),
        }
    }
}

/// Scene `index` of `split`; each scene has its own stream, so scenes can be
/// generated in any order.
pub fn generate_scene(seed: u64, split: Split, index: usize, size: usize) -> Result<SyntheticScene> {
    if size < 2 * LATTICE || !size.is_multiple_of(LATTICE) {
        return Err(Error::Config(format!(
            "scene size {size} must be a multiple of {LATTICE} and at least {}",
            2 * LATTICE
        )));
    }
    let mut rng = RngState::at(seed, streams::DATA, 0).fork(split.label()).fork(index as u64);
    let (h, w) = (size, size);
    let cells = size / LATTICE;
    let mut mask = vec![0u8; h * w];

    let objects = 1 + rng.below(4);
    for _ in 0..objects {
        let class = 1 + rng.below(3) as u8;
        let ch = 1 + rng.below(cells / 2);
        let cw = 1 + rng.below(cells / 2);
        let r0 = rng.below(cells - ch + 1);
        let c0 = rng.below(cells - cw + 1);
        for r in r0 * LATTICE..(r0 + ch) * LATTICE {
            mask[r * w + c0 * LATTICE..r * w + (c0 + cw) * LATTICE].fill(class);
        }
    }
    if mask.iter().all(|&c| c == mask[0]) {
        // guarantee at least two classes: clear the top-left cell
        let fill = if mask[0] == 0 { 1 } else { 0 };
        for r in 0..LATTICE {
            mask[r * w..r * w + LATTICE].fill(fill);
        }
    }

    let night = rng.bernoulli(0.3);
    let gain = if night { NIGHT_GAIN } else { 1.0 };
    let bg = [0.35 + 0.2 * rng.next_f64(), 0.4 + 0.2 * rng.next_f64(), 0.35 + 0.2 * rng.next_f64()];
    let mut ir = vec![0.0; 3 * h * w];
    let mut vis = vec![0.0; 3 * h * w];
    for p in 0..h * w {
        let class = mask[p];
        let hot = matches!(class, 1 | 3);
        let heat = if hot { IR_HOT } else { IR_BACKGROUND } + NOISE * (2.0 * rng.next_f64() - 1.0);
        let colour = match class {
            2 => [0.9, 0.15, 0.15],
            3 => [0.15, 0.2, 0.9],
            _ => bg,
        };
        for c in 0..3 {
            ir[c * h * w + p] = heat.clamp(0.0, 1.0);
            let v = gain * colour[c] + NOISE * (2.0 * rng.next_f64() - 1.0);
            vis[c * h * w + p] = v.clamp(0.0, 1.0);
        }
    }
    Ok(SyntheticScene {
        name: format!("{}{index:04}", split.prefix()),
        ir: Tensor::new(&[3, h, w], ir)?,
        vis: Tensor::new(&[3, h, w], vis)?,
        mask,
    })
}

pub fn generate_split(seed: u64, split: Split, count: usize, size: usize) -> Result<Vec<SyntheticScene>> {
    (0..count).map(|i| generate_scene(seed, split, i, size)).collect()
}

fn scene_paths(dir: &Path, name: &str) -> [PathBuf; 3] {
    [dir.join(format!("{name}_ir.ppm")), dir.join(format!("{name}_vis.ppm")), dir.join(format!("{name}_mask.pgm"))]
}

/// Writes `<name>_ir.ppm`, `<name>_vis.ppm` and `<name>_mask.pgm` per scene.
pub fn write_dataset(dir: impl AsRef<Path>, scenes: &[SyntheticScene]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for s in scenes {
        let [ir, vis, mask] = scene_paths(dir, &s.name);
        pnm::write_pnm(&s.ir, ir)?;
        pnm::write_pnm(&s.vis, vis)?;
        let (h, w) = s.size();
        pnm::write_pgm_bytes(w, h, &s.mask, mask)?;
    }
    Ok(())
}

/// Reads every scene in `dir` whose three files are present, sorted by name.
/// A directory with no scenes is an error.
pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Vec<SyntheticScene>> {
    let dir = dir.as_ref();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if let Some(name) = entry.file_name().to_str().and_then(|f| f.strip_suffix("_ir.ppm")) {
            names.push(name.to_owned());
        }
    }
    names.sort();
    if names.is_empty() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no `<name>_ir.ppm` scenes found"),
        ));
    }
    names
        .into_iter()
        .map(|name| {
            let [ir, vis, mask] = scene_paths(dir, &name);
            let ir = pnm::read_pnm_file(ir)?;
            let vis = pnm::read_pnm_file(vis)?;
            let raw = pnm::parse_pnm(&crate::io::read_file(&mask)?)?;
            if raw.channels != 1 || [3, raw.height, raw.width] != ir.shape() || ir.shape() != vis.shape() {
                return Err(Error::dim(
                    "read_dataset",
                    format!(
                        "scene `{name}`: ir {:?}, vis {:?}, mask {}x{}",
                        ir.shape(),
                        vis.shape(),
                        raw.width,
                        raw.height
                    ),
                ));
            }
            Ok(SyntheticScene { name, ir, vis, mask: raw.pixels })
        })
        .collect()
}
