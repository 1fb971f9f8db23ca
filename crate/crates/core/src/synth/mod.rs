//! Gaussian-process kernel composition for augmentation series and
//! deterministic signal panels.

mod augment;
mod gp;
mod kernel;
mod signal;

pub use augment::{augment_training_stream, SeriesPool, SourceKind, SourceSeries};
pub use gp::{covariance, gp_sample, jittered_cholesky, SyntheticSeries, MAX_DENSE_GRID};
pub use kernel::{sample_kernel_spec, BankConfig, BaseKernel, KernelKind, KernelSpec};
pub use signal::{make_signal_panel, trading_calendar, Pattern, SignalConfig, TRADING_DAYS_PER_YEAR};
