//! Segmentation head, loss, metric, synthetic data, training and evaluation.

pub mod data;
pub mod eval;
pub mod head;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod train;

pub use data::{generate_split, read_dataset, write_dataset, Split, SyntheticScene};
pub use eval::{confusion, evaluate};
pub use head::{argmax_classes, SegHead};
pub use metrics::{miou, ConfusionMatrix, IouReport};
pub use model::{Forward, Model};
pub use optim::{AdamW, AdamWConfig};
pub use train::{batch_loss_and_grads, loss_curve_csv, train, train_step};
