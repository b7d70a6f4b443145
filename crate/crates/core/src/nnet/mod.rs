//! Minimal differentiable network engine: layers with hand-written backward
//! passes, a sequential graph with skip concatenations, Dice and
//! cross-entropy training, and binary checkpoints. All arithmetic is `f64`.

pub mod checkpoint;
pub mod data;
mod layer;
pub mod loss;
mod network;
mod tensor;
pub mod train;

pub use data::{predict_grid_mask, predict_mask, predict_probability, prepare_input, prepare_target, NET_SIZE};
pub use layer::{sigmoid, Layer, LayerKind, ReluMode};
pub use loss::{dice_coefficient, dice_loss, dice_loss_grad};
pub use network::{Backprop, Network, Topology, Trace};
pub use tensor::Tensor;
pub use train::{
    evaluate_dice, train, train_classifier, train_classifier_with, train_with, EpochStats, Optimizer, Sample,
    TrainConfig, TrainReport,
};
