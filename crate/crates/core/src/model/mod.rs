//! Model training: losses, optimizer, checkpointing, and the three-stage
//! training recipe.

pub mod checkpoint;
pub mod losses;
pub mod optim;
pub mod trainer;

pub use checkpoint::{Checkpoint, Manifest, Provenance, TensorInfo};
pub use losses::{joint_loss, smoothed_cross_entropy, supcon_loss};
pub use optim::{AdamW, AdamWConfig};
pub use trainer::{
    average_weights, build_classifier, continue_pretrain_mlm, fine_tune, linear_probe,
    masked_token_accuracy, predict, predict_with, pretrain_mlm, ContrastiveConfig,
    FinetuneConfig, PretrainConfig, Prediction, ProbeConfig, TrainConfig,
};
