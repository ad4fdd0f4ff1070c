//! Cross-modality cutout & cutmix augmentation on a fixed patch grid.
//!
//! Cutmix exchanges whole grid cells between the infrared and visible image;
//! cutout blanks a few cells of one randomly chosen modality. Both are
//! deterministic functions of the inputs, the config and an [`RngState`], and
//! every application is summarised by an [`AugRecord`] that can be replayed.
//! Labels are never touched: both images show the same scene.

use std::fmt;

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::Tensor;

const CUTMIX_STREAM: u64 = 1;
const CUTOUT_STREAM: u64 = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct AugConfig {
    /// `(rows, cols)` of the patch grid.
    pub grid: (usize, usize),
    /// Per-cell probability of exchanging the cell between modalities.
    pub p_cutmix: f64,
    /// Probability of erasing cells in one modality.
    pub p_cutout: f64,
    pub cutout_cells: usize,
    pub fill_value: f64,
    pub enabled: bool,
}

impl Default for AugConfig {
    fn default() -> Self {
        Self { grid: (4, 4), p_cutmix: 0.25, p_cutout: 0.5, cutout_cells: 2, fill_value: 0.0, enabled: true }
    }
}

impl AugConfig {
    pub fn cells(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.0 == 0 || self.grid.1 == 0 {
            return Err(Error::Config("aug grid dimensions must be positive".into()));
        }
        for (name, p) in [("p_cutmix", self.p_cutmix), ("p_cutout", self.p_cutout)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("aug.{name} = {p} is outside [0, 1]")));
            }
        }
        if self.cutout_cells > self.cells() {
            return Err(Error::Config(format!(
                "aug.cutout_cells = {} exceeds the {} grid cells",
                self.cutout_cells,
                self.cells()
            )));
        }
        if !self.fill_value.is_finite() {
            return Err(Error::Config("aug.fill_value must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CutoutTarget {
    Ir,
    Vis,
    #[default]
    None,
}

impl fmt::Display for CutoutTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CutoutTarget::Ir => "ir",
            CutoutTarget::Vis => "vis",
            CutoutTarget::None => "none",
        })
    }
}

/// What an augmentation did, cell indices in row-major grid order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AugRecord {
    pub swapped_cells: Vec<usize>,
    pub cutout_modality: CutoutTarget,
    pub cutout_cells_applied: Vec<usize>,
}

impl AugRecord {
    pub fn is_identity(&self) -> bool {
        self.swapped_cells.is_empty() && self.cutout_modality == CutoutTarget::None
    }

    /// Re-applies the recorded operations to a fresh pair.
    pub fn replay(&self, x: &Tensor, y: &Tensor, cfg: &AugConfig) -> Result<(Tensor, Tensor)> {
        let grid = CellGrid::new(x, y, cfg.grid)?;
        let (mut x, mut y) = (x.clone(), y.clone());
        for &cell in &self.swapped_cells {
            grid.swap(&mut x, &mut y, cell);
        }
        let target = match self.cutout_modality {
            CutoutTarget::Ir => Some(&mut x),
            CutoutTarget::Vis => Some(&mut y),
            CutoutTarget::None => None,
        };
        if let Some(t) = target {
            for &cell in &self.cutout_cells_applied {
                grid.fill(t, cell, cfg.fill_value);
            }
        }
        Ok((x, y))
    }
}

fn join(cells: &[usize]) -> String {
    cells.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

impl fmt::Display for AugRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "swapped_cells: {}", join(&self.swapped_cells))?;
        writeln!(f, "cutout_modality: {}", self.cutout_modality)?;
        writeln!(f, "cutout_cells: {}", join(&self.cutout_cells_applied))
    }
}

/// Pixel extents of the grid cells. The last row/column absorbs any
/// remainder when the image does not divide evenly.
struct CellGrid {
    channels: usize,
    height: usize,
    width: usize,
    rows: Vec<(usize, usize)>,
    cols: Vec<(usize, usize)>,
}

fn spans(len: usize, parts: usize) -> Vec<(usize, usize)> {
    let step = len / parts;
    (0..parts).map(|i| (i * step, if i + 1 == parts { len } else { (i + 1) * step })).collect()
}

impl CellGrid {
    fn new(x: &Tensor, y: &Tensor, grid: (usize, usize)) -> Result<Self> {
        let &[c, h, w] = x.shape() else {
            return Err(Error::dim("augment", format!("image must be [C,H,W], got {:?}", x.shape())));
        };
        if x.shape() != y.shape() {
            return Err(Error::dim("augment", format!("modality shapes differ: {:?} vs {:?}", x.shape(), y.shape())));
        }
        if grid.0 == 0 || grid.1 == 0 || h < grid.0 || w < grid.1 {
            return Err(Error::dim("augment", format!("grid {grid:?} too fine for {h}x{w}")));
        }
        Ok(Self { channels: c, height: h, width: w, rows: spans(h, grid.0), cols: spans(w, grid.1) })
    }

    fn cells(&self) -> usize {
        self.rows.len() * self.cols.len()
    }

    fn for_each_index(&self, cell: usize, mut f: impl FnMut(usize)) {
        let (r0, r1) = self.rows[cell / self.cols.len()];
        let (c0, c1) = self.cols[cell % self.cols.len()];
        for ch in 0..self.channels {
            for r in r0..r1 {
                let base = (ch * self.height + r) * self.width;
                (c0..c1).for_each(|c| f(base + c));
            }
        }
    }

    fn swap(&self, x: &mut Tensor, y: &mut Tensor, cell: usize) {
        let (xd, yd) = (x.data_mut(), y.data_mut());
        self.for_each_index(cell, |i| std::mem::swap(&mut xd[i], &mut yd[i]));
    }

    fn fill(&self, t: &mut Tensor, cell: usize, value: f64) {
        let d = t.data_mut();
        self.for_each_index(cell, |i| d[i] = value);
    }
}

/// Exchanges each grid cell between `x` and `y` with probability `p_cutmix`.
pub fn cutmix_apply(
    x: &Tensor,
    y: &Tensor,
    cfg: &AugConfig,
    rng: &mut RngState,
) -> Result<(Tensor, Tensor, AugRecord)> {
    let grid = CellGrid::new(x, y, cfg.grid)?;
    let (mut xo, mut yo) = (x.clone(), y.clone());
    let mut record = AugRecord::default();
    for cell in 0..grid.cells() {
        if rng.bernoulli(cfg.p_cutmix) {
            grid.swap(&mut xo, &mut yo, cell);
            record.swapped_cells.push(cell);
        }
    }
    Ok((xo, yo, record))
}

/// With probability `p_cutout`, erases `cutout_cells` distinct cells of one
/// uniformly chosen modality.
pub fn cutout_apply(
    x: &Tensor,
    y: &Tensor,
    cfg: &AugConfig,
    rng: &mut RngState,
) -> Result<(Tensor, Tensor, AugRecord)> {
    let grid = CellGrid::new(x, y, cfg.grid)?;
    let (mut xo, mut yo) = (x.clone(), y.clone());
    let mut record = AugRecord::default();
    if rng.bernoulli(cfg.p_cutout) {
        let (target, which) =
            if rng.below(2) == 0 { (&mut xo, CutoutTarget::Ir) } else { (&mut yo, CutoutTarget::Vis) };
        let cells = rng.choose_distinct(grid.cells(), cfg.cutout_cells.min(grid.cells()));
        for &cell in &cells {
            grid.fill(target, cell, cfg.fill_value);
        }
        record.cutout_modality = which;
        record.cutout_cells_applied = cells;
    }
    Ok((xo, yo, record))
}

/// Cutmix followed by cutout, each on its own child stream of `rng`.
pub fn cma_apply(x: &Tensor, y: &Tensor, cfg: &AugConfig, rng: &RngState) -> Result<(Tensor, Tensor, AugRecord)> {
    if !cfg.enabled {
        CellGrid::new(x, y, cfg.grid)?;
        return Ok((x.clone(), y.clone(), AugRecord::default()));
    }
    let (x1, y1, mix) = cutmix_apply(x, y, cfg, &mut rng.fork(CUTMIX_STREAM))?;
    let (x2, y2, out) = cutout_apply(&x1, &y1, cfg, &mut rng.fork(CUTOUT_STREAM))?;
    Ok((x2, y2, AugRecord { swapped_cells: mix.swapped_cells, ..out }))
}

/// The child streams [`cma_apply`] uses, exposed so callers can reproduce
/// the composition from the two sub-operations.
pub fn cma_streams(rng: &RngState) -> (RngState, RngState) {
    (rng.fork(CUTMIX_STREAM), rng.fork(CUTOUT_STREAM))
}
