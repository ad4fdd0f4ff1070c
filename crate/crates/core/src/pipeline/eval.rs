use rayon::prelude::*;

use crate::backbone::{substitute_missing, Missing};
use crate::error::{Error, Result};
use crate::params::ParamStore;

use super::data::SyntheticScene;
use super::metrics::{miou, ConfusionMatrix, IouReport};
use super::model::Model;

/// Confusion matrix over `scenes` with the `missing` modality substituted
/// before every forward pass. Scenes are processed in parallel, each into its
/// own matrix, and merged by addition.
pub fn confusion(
    model: &Model,
    store: &ParamStore,
    scenes: &[SyntheticScene],
    missing: Missing,
) -> Result<ConfusionMatrix> {
    if scenes.is_empty() {
        return Err(Error::Invalid("evaluation set is empty".into()));
    }
    let k = model.classes();
    let parts = scenes
        .par_iter()
        .map(|s| {
            let (x, y) = substitute_missing(&s.ir, &s.vis, missing);
            let (_, pred) = model.predict(store, &x, &y)?;
            let mut cm = ConfusionMatrix::new(k);
            cm.update(&s.mask, &pred)?;
            Ok(cm)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.iter().fold(ConfusionMatrix::new(k), |acc, cm| acc.merge(cm)))
}

pub fn evaluate(model: &Model, store: &ParamStore, scenes: &[SyntheticScene], missing: Missing) -> Result<IouReport> {
    miou(&confusion(model, store, scenes, missing)?)
}
