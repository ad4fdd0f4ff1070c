//! Infrared/visible dual-modality fusion at desk scale.
//!
//! The crate provides a small dense tensor type with reverse-mode
//! differentiation ([`graph`]), the feature/token enhancement and
//! attention-guided fusion blocks ([`fusion`]), cross-modality cutout/cutmix
//! augmentation ([`augment`]), a toy dual-branch encoder ([`backbone`]), a
//! segmentation pipeline with training and mIoU evaluation ([`pipeline`]),
//! and the on-disk formats ([`io`]).

pub mod augment;
pub mod backbone;
pub mod config;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod graph;
pub mod io;
pub mod ops;
pub mod params;
pub mod pipeline;
pub mod rng;
pub mod tensor;

pub use augment::{cma_apply, AugConfig, AugRecord};
pub use backbone::{substitute_missing, Backbone, Missing, MultiScaleFeatures};
pub use config::{Config, FusionConfig, ModelConfig, TrainConfig};
pub use error::{Error, Result};
pub use fusion::FemMode;
pub use graph::{Gradients, Graph, OpKind, Var};
pub use params::ParamStore;
pub use pipeline::{ConfusionMatrix, IouReport, Model, SyntheticScene};
pub use rng::RngState;
pub use tensor::Tensor;
