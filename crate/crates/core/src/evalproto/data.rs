use std::ops::Range;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::chronos::mean_scale;
use crate::error::{Error, Result};
use crate::panel::ReturnPanel;
use crate::synth::{SeriesPool, SourceKind};
use crate::tensorcore::Tensor;

/// Valid returns of one asset and the date rows they sit on.
#[derive(Clone, Debug, PartialEq)]
pub struct AssetHistory {
    pub asset: usize,
    pub rows: Vec<usize>,
    pub values: Vec<f64>,
}

impl AssetHistory {
    pub fn of(panel: &ReturnPanel, asset: usize) -> Self {
        let (rows, values) = panel.asset_series(asset).into_iter().unzip();
        Self { asset, rows, values }
    }

    /// Number of valid returns strictly before date row `t`.
    pub fn count_before(&self, t: usize) -> usize {
        self.rows.partition_point(|&r| r < t)
    }

    /// The `c` most recent valid returns before row `t`, oldest first.
    pub fn context_before(&self, t: usize, c: usize) -> Option<&[f64]> {
        let k = self.count_before(t);
        (k >= c && c > 0).then(|| &self.values[k - c..k])
    }

    /// Valid returns on rows inside `rows`.
    pub fn slice(&self, rows: &Range<usize>) -> (&[usize], &[f64]) {
        let a = self.rows.partition_point(|&r| r < rows.start);
        let b = self.rows.partition_point(|&r| r < rows.end);
        (&self.rows[a..b], &self.values[a..b])
    }
}

pub fn context_index(panel: &ReturnPanel) -> Vec<AssetHistory> {
    (0..panel.n_assets()).map(|i| AssetHistory::of(panel, i)).collect()
}

/// Series a vintage trains on. Panel series keep their date rows so that
/// lag-feature rows can be ordered in time.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingData {
    pool: SeriesPool,
    rows: Vec<Option<Vec<usize>>>,
}

impl TrainingData {
    /// Panel returns of `assets` on `rows`, followed by the extra series.
    pub fn build(histories: &[AssetHistory], assets: &[usize], rows: &Range<usize>, extra: &[(SourceKind, Vec<f64>)]) -> Self {
        let mut data = Self::default();
        for &i in assets {
            let (r, v) = histories[i].slice(rows);
            data.pool.push(SourceKind::Panel, v.to_vec());
            data.rows.push(Some(r.to_vec()));
        }
        for (kind, values) in extra {
            data.pool.push(*kind, values.clone());
            data.rows.push(None);
        }
        data
    }

    pub fn pool(&self) -> &SeriesPool {
        &self.pool
    }

    /// Uniformly chosen long-enough series, then a uniform start.
    pub fn sample_window(&self, rng: &mut ChaCha8Rng, len: usize) -> Option<&[f64]> {
        self.pool.sample_window(rng, len)
    }

    pub fn has_window(&self, len: usize) -> bool {
        self.pool.series().iter().any(|s| s.values.len() >= len)
    }

    /// Every `(series, end)` position with `c` values before `end`. Series
    /// without dates come first, then panel positions by target date.
    fn positions(&self, c: usize) -> Vec<(usize, usize)> {
        let mut undated = Vec::new();
        let mut dated = Vec::new();
        for (s, series) in self.pool.series().iter().enumerate() {
            for k in c..series.values.len() {
                match &self.rows[s] {
                    Some(r) => dated.push((r[k], s, k)),
                    None => undated.push((s, k)),
                }
            }
        }
        dated.sort_unstable();
        undated.extend(dated.into_iter().map(|(_, s, k)| (s, k)));
        undated
    }

    /// Lag-feature design: each row holds the `c` returns before a target,
    /// most recent last. At most `cap` rows are kept, chosen uniformly with
    /// `seed` and left in time order.
    pub fn pairs(&self, c: usize, cap: usize, seed: u64) -> Result<(Tensor, Vec<f64>)> {
        let mut pos = self.positions(c);
        if pos.is_empty() {
            return Err(Error::Validation(format!("no training pairs with {c} lagged returns")));
        }
        if pos.len() > cap {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut keep = index::sample(&mut rng, pos.len(), cap).into_vec();
            keep.sort_unstable();
            pos = keep.into_iter().map(|i| pos[i]).collect();
        }
        let series = self.pool.series();
        let mut x = Vec::with_capacity(pos.len() * c);
        let mut y = Vec::with_capacity(pos.len());
        for (s, k) in pos {
            let v = &series[s].values;
            x.extend_from_slice(&v[k - c..k]);
            y.push(v[k]);
        }
        Ok((Tensor::matrix(y.len(), c, x)?, y))
    }

    /// Mean-scaled values of consecutive non-overlapping `c`-chunks.
    pub fn scaled_chunks(&self, c: usize) -> Vec<f64> {
        let mut out = Vec::new();
        for s in self.pool.series() {
            for chunk in s.values.chunks_exact(c.max(1)) {
                if let Ok((_, z)) = mean_scale(chunk) {
                    out.extend(z);
                }
            }
        }
        out
    }
}
