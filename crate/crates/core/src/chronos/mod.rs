//! Token forecaster: mean scaling, uniform-bin quantization, a causal
//! decoder trained with next-token cross-entropy and Monte-Carlo forecasts.

mod model;
mod tokenizer;

pub use model::{ChronosConfig, ChronosModel, DEFAULT_SAMPLES, FAMILY};
pub use tokenizer::{
    fit_dynamic_bounds, mean_scale, point_and_direction, tokenize, TokenSeries, TokenizerConfig, TokenizerMode,
    MIN_BOUND_VALUES,
};
