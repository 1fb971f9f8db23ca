//! Raw daily security records, the cleaning pipeline and the immutable
//! excess-return panel.

mod clean;
mod io;

pub use clean::{
    apply_delisting, clean, compute_excess_return, drop_empty_dates, filter_raw, impute_country_day, mask_boundaries,
    winsorize, CleanConfig, CleanOutput, DropEntry, DropReason, ScoredRecord,
};
pub use io::{read_cache, read_drop_log, read_raw_csv, write_cache, write_drop_log, write_raw_csv, CACHE_FORMAT};

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One input row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub date: NaiveDate,
    pub asset_id: String,
    pub country: String,
    pub price: Option<f64>,
    pub dividend: f64,
    pub risk_free_daily: f64,
    pub market_cap: Option<f64>,
    pub delist_flag: bool,
    pub delist_return: Option<f64>,
}

impl RawRecord {
    /// A plain record with no dividend, risk-free rate or delisting.
    pub fn new(date: NaiveDate, asset_id: &str, country: &str, price: f64, market_cap: f64) -> Self {
        Self {
            date,
            asset_id: asset_id.to_string(),
            country: country.to_string(),
            price: Some(price),
            dividend: 0.0,
            risk_free_daily: 0.0,
            market_cap: Some(market_cap),
            delist_flag: false,
            delist_return: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AssetMeta {
    pub id: String,
    pub country: String,
}

/// Market-cap stratum of an asset on a date.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratum {
    Small,
    Mid,
    Large,
}

impl Stratum {
    pub fn as_str(self) -> &'static str {
        match self {
            Stratum::Small => "small",
            Stratum::Mid => "mid",
            Stratum::Large => "large",
        }
    }
}

/// Rectangular date × asset matrix of daily excess returns.
///
/// Cells are stored row-major by date. Masked cells hold `0.0` in the value
/// buffer and are never exposed through [`ReturnPanel::get`].
#[derive(Clone, Debug, PartialEq)]
pub struct ReturnPanel {
    dates: Vec<NaiveDate>,
    assets: Vec<AssetMeta>,
    returns: Vec<f64>,
    mask: Vec<bool>,
    market_cap: Vec<f64>,
    first_valid: Vec<Option<usize>>,
    last_valid: Vec<Option<usize>>,
}

impl ReturnPanel {
    /// Builds a panel from raw buffers. `market_cap` uses NaN for missing.
    /// Masked return cells are zeroed; `first_valid`/`last_valid` are derived
    /// from the mask.
    pub fn from_parts(
        dates: Vec<NaiveDate>,
        assets: Vec<AssetMeta>,
        mut returns: Vec<f64>,
        mask: Vec<bool>,
        market_cap: Vec<f64>,
    ) -> Result<Self> {
        let cells = dates.len() * assets.len();
        for (name, len) in [("returns", returns.len()), ("mask", mask.len()), ("market_cap", market_cap.len())] {
            if len != cells {
                return Err(Error::dim(name, cells, len));
            }
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Validation("panel dates must be strictly ascending".into()));
        }
        for (v, &m) in returns.iter_mut().zip(&mask) {
            if !m {
                *v = 0.0;
            } else if !v.is_finite() {
                return Err(Error::Validation("unmasked return is not finite".into()));
            }
        }
        let mut p = Self {
            dates,
            assets,
            returns,
            mask,
            market_cap,
            first_valid: Vec::new(),
            last_valid: Vec::new(),
        };
        p.refresh_bounds();
        Ok(p)
    }

    pub fn empty() -> Self {
        Self {
            dates: Vec::new(),
            assets: Vec::new(),
            returns: Vec::new(),
            mask: Vec::new(),
            market_cap: Vec::new(),
            first_valid: Vec::new(),
            last_valid: Vec::new(),
        }
    }

    pub(crate) fn refresh_bounds(&mut self) {
        let n = self.assets.len();
        self.first_valid = vec![None; n];
        self.last_valid = vec![None; n];
        for t in 0..self.dates.len() {
            for i in 0..n {
                if self.mask[t * n + i] {
                    self.first_valid[i].get_or_insert(t);
                    self.last_valid[i] = Some(t);
                }
            }
        }
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn assets(&self) -> &[AssetMeta] {
        &self.assets
    }

    pub fn asset_index(&self, id: &str) -> Option<usize> {
        self.assets.iter().position(|a| a.id == id)
    }

    pub fn date_index(&self, d: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&d).ok()
    }

    pub fn year(&self, t: usize) -> i32 {
        self.dates[t].year()
    }

    pub fn returns_raw(&self) -> &[f64] {
        &self.returns
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn market_caps_raw(&self) -> &[f64] {
        &self.market_cap
    }

    pub fn get(&self, t: usize, i: usize) -> Option<f64> {
        let k = t * self.assets.len() + i;
        self.mask[k].then(|| self.returns[k])
    }

    pub fn is_valid(&self, t: usize, i: usize) -> bool {
        self.mask[t * self.assets.len() + i]
    }

    pub fn market_cap(&self, t: usize, i: usize) -> Option<f64> {
        let v = self.market_cap[t * self.assets.len() + i];
        v.is_finite().then_some(v)
    }

    pub fn first_valid(&self, i: usize) -> Option<usize> {
        self.first_valid[i]
    }

    pub fn last_valid(&self, i: usize) -> Option<usize> {
        self.last_valid[i]
    }

    /// Number of unmasked cells.
    pub fn observations(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Number of assets with at least one unmasked cell.
    pub fn securities(&self) -> usize {
        self.first_valid.iter().filter(|f| f.is_some()).count()
    }

    /// Valid `(date index, return)` pairs of one asset in date order.
    pub fn asset_series(&self, i: usize) -> Vec<(usize, f64)> {
        (0..self.dates.len()).filter_map(|t| self.get(t, i).map(|r| (t, r))).collect()
    }

    /// Indices of dates falling in calendar `year`.
    pub fn year_range(&self, year: i32) -> std::ops::Range<usize> {
        let start = self.dates.partition_point(|d| d.year() < year);
        let end = self.dates.partition_point(|d| d.year() <= year);
        start..end
    }

    /// Returns a copy with one cell overwritten (and unmasked).
    pub fn with_cell(&self, t: usize, i: usize, value: f64) -> Self {
        let mut p = self.clone();
        let k = t * p.assets.len() + i;
        p.returns[k] = value;
        p.mask[k] = true;
        p.refresh_bounds();
        p
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut Vec<f64>, &mut Vec<bool>) {
        (&mut self.returns, &mut self.mask)
    }

    /// Keeps only the listed date rows (ascending indices).
    pub(crate) fn select_dates(&self, keep: &[usize]) -> Self {
        let n = self.assets.len();
        let mut returns = Vec::with_capacity(keep.len() * n);
        let mut mask = Vec::with_capacity(keep.len() * n);
        let mut caps = Vec::with_capacity(keep.len() * n);
        for &t in keep {
            returns.extend_from_slice(&self.returns[t * n..(t + 1) * n]);
            mask.extend_from_slice(&self.mask[t * n..(t + 1) * n]);
            caps.extend_from_slice(&self.market_cap[t * n..(t + 1) * n]);
        }
        let mut p = Self {
            dates: keep.iter().map(|&t| self.dates[t]).collect(),
            assets: self.assets.clone(),
            returns,
            mask,
            market_cap: caps,
            first_valid: Vec::new(),
            last_valid: Vec::new(),
        };
        p.refresh_bounds();
        p
    }
}

/// Labels assets on date `t` by market-cap quartile. Assets are sorted by
/// `(cap, asset_id)`; the lowest `⌈n/4⌉` are small, the highest `⌈n/4⌉` are
/// large, and an asset in both groups is large. Assets without a cap get
/// `None`.
pub fn cap_strata(panel: &ReturnPanel, t: usize) -> Vec<Option<Stratum>> {
    let caps: Vec<Option<f64>> = (0..panel.n_assets()).map(|i| panel.market_cap(t, i)).collect();
    let ids: Vec<&str> = panel.assets().iter().map(|a| a.id.as_str()).collect();
    strata_from_caps(&caps, &ids)
}

/// [`cap_strata`] on bare vectors.
pub fn strata_from_caps(caps: &[Option<f64>], ids: &[&str]) -> Vec<Option<Stratum>> {
    let mut order: Vec<usize> = (0..caps.len()).filter(|&i| caps[i].is_some()).collect();
    order.sort_by(|&a, &b| {
        caps[a]
            .unwrap()
            .total_cmp(&caps[b].unwrap())
            .then_with(|| ids[a].cmp(ids[b]))
    });
    let n = order.len();
    let k = n.div_ceil(4);
    let mut out = vec![None; caps.len()];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = Some(if rank + k >= n {
            Stratum::Large
        } else if rank < k {
            Stratum::Small
        } else {
            Stratum::Mid
        });
    }
    out
}
