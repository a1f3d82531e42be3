//! Model assembly, the joint signal/noise objective, RMSprop, training and
//! enhancement.
//!
//! Five architectures share one parameter layout scheme
//! ([`layout`]): a DNN, a CNN, a BLSTM RNN, a CRNN with separate enhanced
//! and noise heads, and the TAP-CRNN whose heads each pool the CNN features
//! with temporal attention before their dense layers.

mod config;
mod enhance;
mod forward;
mod params;
mod train;

pub use config::{Architecture, Geometry, InitScheme, ModelConfig};
pub use enhance::{Checkpoint, Enhancement, TrainingRecord, CHECKPOINT_VERSION};
pub use forward::{forward, forward_nodes, ForwardNodes, ForwardOutput};
pub use params::{layout, parameter_count, BlockSpec, ModelParams};
pub use train::{
    loss, split_indices, train, utterance_gradients, utterance_loss, BatchExecutor, EpochStats, Example, GradientJob,
    LossJob, MixtureFeatures, RmsProp, Sequential, TrainConfig, TrainOutcome, LR_ALTERNATE, LR_DESK, LR_LITERAL,
};
