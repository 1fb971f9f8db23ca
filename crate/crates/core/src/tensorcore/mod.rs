//! Dense tensors, reverse-mode differentiation, Transformer blocks, Adam and
//! the `TSFC` checkpoint format.

pub mod adam;
pub mod backbone;
pub mod checkpoint;
pub mod graph;
pub mod nn;
pub mod tensor;
pub mod train;

pub use adam::{AdamConfig, OptimizerState};
pub use backbone::{Backbone, BackboneConfig};
pub use checkpoint::{CheckpointDescriptor, ModelCheckpoint, Regime};
pub use graph::{Grads, Graph, Var};
pub use nn::{AttentionConfig, BlockIdx, MhsaParams, ParamSet};
pub use tensor::{softmax_rows, Tensor};
pub use train::{train_loop, Objective, TrainReport, TrainSchedule};

#[cfg(test)]
pub(crate) mod fdcheck;
