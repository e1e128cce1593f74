//! Learned residual denoiser trained from scratch.

pub mod checkpoint;
pub mod data;
pub mod net;
pub mod train;

pub use data::{Pair, PairDataset, Role};
pub use net::{Architecture, ConvLayer, DenoiserParams, Gradients, Padding, Provenance};
pub use train::{
    adapt, adapt_with_validation, loss_and_grad, mean_loss, pretrain, pretrain_with_validation, train,
    train_zero_start, EpochStats, TrainConfig, Trained,
};
