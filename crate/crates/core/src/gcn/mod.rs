//! Two-layer graph convolutional network with hand-derived gradients.
//!
//! The same engine backs the K+1-way OOD filter and the K-way ID classifier:
//!
//! ```text
//! H1     = ReLU(Â X W0)          (dropout on H1 while training)
//! logits = Â H1 W1               (softmax folded into the loss)
//! ```
//!
//! There are no bias terms. Training is full-batch Adam with coupled weight
//! decay and is bit-reproducible for a given seed.

mod adam;
mod checkpoint;
mod loss;
mod model;
mod train;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointHeader};
pub use loss::{softmax_row, softmax_rows, weighted_ce_loss};
pub use model::{backward, forward, DropoutMask, GcnActivations, GcnGradients, GcnModel};
pub use train::{
    train, EpochRecord, LabeledTrainingSet, ModelSelection, Provenance, TrainConfig, TrainLog,
    TrainOutcome,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("training node {node} has label {label} outside 0..{out_dim}")]
    LabelOutOfRange { node: usize, label: usize, out_dim: usize },
    #[error("training node {0} listed twice")]
    DuplicateNode(usize),
    #[error("non-finite loss or weights at epoch {0}")]
    NonFiniteLoss(usize),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
