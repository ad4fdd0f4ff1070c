//! Benchmark fixtures; see `benches/`.

use ivgf_core::params::ParamStore;
use ivgf_core::pipeline::{generate_split, Split};
use ivgf_core::{Config, Model, RngState, SyntheticScene, Tensor};

pub fn uniform(shape: &[usize], seed: u64) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, &mut RngState::new(seed))
}

/// The default model with fresh parameters and one synthetic eval scene.
pub fn model_and_scene(size: usize) -> (Config, Model, ParamStore, SyntheticScene) {
    let mut cfg = Config::default();
    cfg.data.size = size;
    let model = Model::new(&cfg).expect("default config is valid");
    let store = model.init_params(0);
    let scene = generate_split(0, Split::Eval, 1, size).expect("valid size").remove(0);
    (cfg, model, store, scene)
}
