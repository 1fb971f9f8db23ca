//! Patch forecaster: left-padded patches, residual encoder and horizon
//! head around a causal decoder, masked MSE training and rolling rollouts.

mod model;
mod patch;

pub use model::{context_stats, rolling_with, PreparedWindow, TimesFmConfig, TimesFmModel, DEFAULT_MASK_PROB, FAMILY};
pub use patch::{patchify, sign_direction, PatchConfig, PatchSeries};
