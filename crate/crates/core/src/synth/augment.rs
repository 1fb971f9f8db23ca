use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gp::{gp_sample, SyntheticSeries};
use super::kernel::{sample_kernel_spec, BankConfig};
use crate::error::Result;
use crate::panel::ReturnPanel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Panel,
    Auxiliary,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SourceSeries {
    pub kind: SourceKind,
    pub values: Vec<f64>,
}

/// Collection of series that training windows are drawn from. A window is
/// drawn by picking a long-enough series uniformly, then a start uniformly.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SeriesPool {
    series: Vec<SourceSeries>,
}

impl SeriesPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, kind: SourceKind, values: Vec<f64>) {
        self.series.push(SourceSeries { kind, values });
    }

    /// Adds every asset's valid returns on date rows `..end`.
    pub fn add_panel(&mut self, panel: &ReturnPanel, end: usize) {
        for i in 0..panel.n_assets() {
            let vals: Vec<f64> = (0..end.min(panel.n_dates())).filter_map(|t| panel.get(t, i)).collect();
            self.push(SourceKind::Panel, vals);
        }
    }

    pub fn add_auxiliary(&mut self, series: impl IntoIterator<Item = Vec<f64>>) {
        for s in series {
            self.push(SourceKind::Auxiliary, s);
        }
    }

    /// Appends `count` GP trajectories of length `len`, seeded from `seed`.
    pub fn add_synthetic(&mut self, count: usize, len: usize, bank: &BankConfig, seed: u64) -> Result<Vec<SyntheticSeries>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let spec = sample_kernel_spec(&mut rng, bank)?;
            let s = gp_sample(&spec, len, rng.random())?;
            self.push(SourceKind::Synthetic, s.values.clone());
            out.push(s);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn series(&self) -> &[SourceSeries] {
        &self.series
    }

    pub fn count(&self, kind: SourceKind) -> usize {
        self.series.iter().filter(|s| s.kind == kind).count()
    }

    /// Draws a contiguous window of `len` values; `None` when no series is
    /// long enough.
    pub fn sample_window<R: Rng + ?Sized>(&self, rng: &mut R, len: usize) -> Option<&[f64]> {
        let eligible: Vec<&SourceSeries> = self.series.iter().filter(|s| s.values.len() >= len).collect();
        if eligible.is_empty() || len == 0 {
            return None;
        }
        let s = eligible[rng.random_range(0..eligible.len())];
        let start = rng.random_range(0..=s.values.len() - len);
        Some(&s.values[start..start + len])
    }
}

/// Pool of panel series up to date row `end`, optional auxiliary series and
/// `synthetic_count` GP series.
pub fn augment_training_stream(
    panel: &ReturnPanel,
    end: usize,
    synthetic_count: usize,
    auxiliary: &[Vec<f64>],
    synth_len: usize,
    bank: &BankConfig,
    seed: u64,
) -> Result<SeriesPool> {
    let mut pool = SeriesPool::new();
    pool.add_panel(panel, end);
    pool.add_auxiliary(auxiliary.iter().cloned());
    pool.add_synthetic(synthetic_count, synth_len, bank, seed)?;
    Ok(pool)
}
