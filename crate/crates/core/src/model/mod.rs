//! Per-pixel MLP classifier, Adam, Dice and the local fine-tuning loop.

mod adam;
mod dice;
mod mlp;
mod spec;
mod train;

use thiserror::Error;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use dice::{dice_score, DiceScore};
pub use mlp::Batch;
pub use spec::{Activation, ModelSpec, ModelWeights};
pub use train::{
    evaluate_dice, fine_tune, lr_schedule, mean_loss, predict_image, FineTuneParams, LR_HALVING_INTERVAL,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("weights belong to a different model spec")]
    SpecMismatch,
    #[error("expected {expected} parameters, got {actual}")]
    ParamCount { expected: usize, actual: usize },
    #[error("shape mismatch in {what}: expected {expected}, got {actual}")]
    Shape {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty shard")]
    EmptyShard,
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("{0}")]
    InvalidArgument(String),
}
