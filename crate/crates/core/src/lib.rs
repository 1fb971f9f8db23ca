//! Forecasting lab for daily equity returns: panel cleaning, synthetic
//! series, token and patch foundation models, classical benchmarks, the
//! annual-vintage evaluation protocol and decile portfolios.

pub mod error;
pub mod stats;
pub mod tensorcore;

pub mod chronos;
pub mod evalproto;
pub mod gbt;
pub mod linreg;
pub mod nnbench;
pub mod panel;
pub mod portfolio;
pub mod synth;
pub mod timesfm;

pub use error::{Error, Result};
