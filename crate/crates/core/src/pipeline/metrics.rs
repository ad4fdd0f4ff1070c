use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::ops::IGNORE_LABEL;

/// `K×K` pixel counts; rows are ground truth, columns are predictions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self { classes, counts: vec![0; classes * classes] }
    }

    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(Error::dim("confusion", format!("{} counts for {classes} classes", counts.len())));
        }
        Ok(Self { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one image; pixels labelled 255 are skipped.
    pub fn update(&mut self, truth: &[u8], pred: &[u8]) -> Result<()> {
        if truth.len() != pred.len() {
            return Err(Error::dim("confusion", format!("{} labels vs {} predictions", truth.len(), pred.len())));
        }
        for (&t, &p) in truth.iter().zip(pred) {
            if t == IGNORE_LABEL {
                continue;
            }
            let (t, p) = (usize::from(t), usize::from(p));
            if t >= self.classes || p >= self.classes {
                return Err(Error::Invalid(format!("class id {} out of range for {} classes", t.max(p), self.classes)));
            }
            self.counts[t * self.classes + p] += 1;
        }
        Ok(())
    }

    /// Elementwise sum, used to merge per-worker matrices.
    pub fn merge(mut self, other: &ConfusionMatrix) -> Self {
        assert_eq!(self.classes, other.classes);
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        self
    }
}

/// Per-class IoU (`None` where the class never occurs in truth or prediction)
/// and their mean over the defined classes.
#[derive(Clone, Debug, PartialEq)]
pub struct IouReport {
    pub per_class: Vec<Option<f64>>,
    pub miou: f64,
}

pub fn miou(cm: &ConfusionMatrix) -> Result<IouReport> {
    let k = cm.classes();
    let per_class: Vec<Option<f64>> = (0..k)
        .map(|c| {
            let tp = cm.get(c, c);
            let row: u64 = (0..k).map(|j| cm.get(c, j)).sum();
            let col: u64 = (0..k).map(|i| cm.get(i, c)).sum();
            let denom = row + col - tp;
            (denom > 0).then(|| tp as f64 / denom as f64)
        })
        .collect();
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::Invalid("mIoU undefined: no class has any pixels".into()));
    }
    let miou = defined.iter().sum::<f64>() / defined.len() as f64;
    Ok(IouReport { per_class, miou })
}

impl IouReport {
    /// `class_id,iou` rows followed by `miou,<value>`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("class_id,iou\n");
        for (c, v) in self.per_class.iter().enumerate() {
            match v {
                Some(v) => writeln!(s, "{c},{v:.6}").unwrap(),
                None => writeln!(s, "{c},nan").unwrap(),
            }
        }
        writeln!(s, "miou,{:.6}", self.miou).unwrap();
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = String::from("class  IoU\n-----  --------\n");
        for (c, v) in self.per_class.iter().enumerate() {
            match v {
                Some(v) => writeln!(s, "{c:>5}  {v:.6}").unwrap(),
                None => writeln!(s, "{c:>5}  n/a").unwrap(),
            }
        }
        writeln!(s, " mIoU  {:.6}", self.miou).unwrap();
        s
    }
}
