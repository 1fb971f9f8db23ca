use std::collections::{BTreeMap, BTreeSet, HashSet};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AssetMeta, RawRecord, ReturnPanel};
use crate::error::{Error, Result};
use crate::stats::{median, percentile_linear};

/// Knobs of the cleaning pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleanConfig {
    /// Also drop prices below `min_price`.
    pub eval_universe: bool,
    pub min_price: f64,
    /// Returns with a larger absolute value are treated as data errors.
    pub max_abs_return: f64,
    /// Country-day market-cap percentile below which records are dropped.
    pub cap_percentile: f64,
    pub delist_default: f64,
    pub winsor_bound: f64,
    /// Optional pooled percentile clamp `(low, high)` applied before
    /// winsorization.
    pub quantile_clamp: Option<(f64, f64)>,
}

impl Default for CleanConfig {
    fn default() -> Self {
        Self {
            eval_universe: false,
            min_price: 5.0,
            max_abs_return: 10.0,
            cap_percentile: 5.0,
            delist_default: -0.30,
            winsor_bound: 1.0,
            quantile_clamp: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    MissingPrice,
    NonpositivePrice,
    ExtremeReturn,
    SmallCap,
    MinPrice,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::MissingPrice => "missing_price",
            DropReason::NonpositivePrice => "nonpositive_price",
            DropReason::ExtremeReturn => "extreme_return",
            DropReason::SmallCap => "small_cap",
            DropReason::MinPrice => "min_price",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            DropReason::MissingPrice,
            DropReason::NonpositivePrice,
            DropReason::ExtremeReturn,
            DropReason::SmallCap,
            DropReason::MinPrice,
        ]
        .into_iter()
        .find(|r| r.as_str() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropEntry {
    pub date: NaiveDate,
    pub asset_id: String,
    pub reason: DropReason,
}

/// A raw record together with its one-day excess return, when computable.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredRecord {
    pub record: RawRecord,
    pub ret: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CleanOutput {
    pub panel: ReturnPanel,
    pub drops: Vec<DropEntry>,
}

/// `(price + dividend - prev_price) / prev_price - rf_daily`.
pub fn compute_excess_return(
    prev_price: f64,
    price: f64,
    dividend: f64,
    rf_daily: f64,
    date: NaiveDate,
    asset_id: &str,
) -> Result<f64> {
    if !(prev_price > 0.0) {
        return Err(Error::RejectedRecord {
            date,
            asset_id: asset_id.to_string(),
            reason: format!("previous price {prev_price} is not positive"),
        });
    }
    Ok((price + dividend - prev_price) / prev_price - rf_daily)
}

fn check_unique(records: &[RawRecord]) -> Result<()> {
    let mut seen = HashSet::with_capacity(records.len());
    for r in records {
        if !seen.insert((r.date, r.asset_id.as_str())) {
            return Err(Error::Validation(format!("duplicate record for {} on {}", r.asset_id, r.date)));
        }
        for (name, v) in [("price", r.price), ("market_cap", r.market_cap)] {
            if let Some(v) = v {
                if !v.is_finite() {
                    return Err(Error::RejectedRecord {
                        date: r.date,
                        asset_id: r.asset_id.clone(),
                        reason: format!("{name} is not finite"),
                    });
                }
            }
        }
    }
    Ok(())
}

fn by_asset_date(a: &RawRecord, b: &RawRecord) -> std::cmp::Ordering {
    a.asset_id.cmp(&b.asset_id).then(a.date.cmp(&b.date))
}

/// Fails when a delisting flag sits on anything but an asset's final row.
fn check_delist_final<'a>(rows: impl Iterator<Item = &'a RawRecord>) -> Result<()> {
    let mut last: Option<&RawRecord> = None;
    for r in rows {
        if let Some(prev) = last {
            if prev.asset_id == r.asset_id && prev.delist_flag {
                return Err(Error::Validation(format!(
                    "delisting flag for {} on {} is not on its final row",
                    prev.asset_id, prev.date
                )));
            }
        }
        last = Some(r);
    }
    Ok(())
}

/// Drops unusable records and attaches raw one-day returns.
///
/// The return of a record uses the previous input row of the same asset when
/// that row has a positive price. Delisting rows survive a missing price since
/// their return comes from the delisting fields.
pub fn filter_raw(mut records: Vec<RawRecord>, cfg: &CleanConfig) -> Result<(Vec<ScoredRecord>, Vec<DropEntry>)> {
    check_unique(&records)?;
    records.sort_by(by_asset_date);
    check_delist_final(records.iter())?;

    let mut scored = Vec::with_capacity(records.len());
    let mut drops = Vec::new();
    let mut prev: Option<&RawRecord> = None;
    for r in &records {
        let prev_price = prev
            .filter(|p| p.asset_id == r.asset_id)
            .and_then(|p| p.price)
            .filter(|&p| p > 0.0);
        prev = Some(r);
        let reason = match r.price {
            None if !r.delist_flag => Some(DropReason::MissingPrice),
            Some(p) if p <= 0.0 && !r.delist_flag => Some(DropReason::NonpositivePrice),
            Some(p) if cfg.eval_universe && p < cfg.min_price && !r.delist_flag => Some(DropReason::MinPrice),
            _ => None,
        };
        let ret = match (prev_price, r.price) {
            (Some(pp), Some(p)) if p > 0.0 => {
                Some(compute_excess_return(pp, p, r.dividend, r.risk_free_daily, r.date, &r.asset_id)?)
            }
            _ => None,
        };
        let reason = reason.or_else(|| ret.filter(|x| x.abs() > cfg.max_abs_return).map(|_| DropReason::ExtremeReturn));
        match reason {
            Some(reason) => drops.push(DropEntry {
                date: r.date,
                asset_id: r.asset_id.clone(),
                reason,
            }),
            None => scored.push(ScoredRecord { record: r.clone(), ret }),
        }
    }

    // Bottom market-cap percentile per country-day among surviving records.
    let mut slices: BTreeMap<(&str, NaiveDate), Vec<f64>> = BTreeMap::new();
    for s in &scored {
        if let Some(c) = s.record.market_cap {
            slices.entry((s.record.country.as_str(), s.record.date)).or_default().push(c);
        }
    }
    let cut: BTreeMap<(String, NaiveDate), f64> = slices
        .into_iter()
        .map(|(k, mut caps)| {
            caps.sort_by(f64::total_cmp);
            ((k.0.to_string(), k.1), percentile_linear(&caps, cfg.cap_percentile).unwrap_or(f64::NEG_INFINITY))
        })
        .collect();
    let mut kept = Vec::with_capacity(scored.len());
    for s in scored {
        let small = match s.record.market_cap {
            Some(c) => c < cut[&(s.record.country.clone(), s.record.date)],
            None => false,
        };
        if small {
            drops.push(DropEntry {
                date: s.record.date,
                asset_id: s.record.asset_id.clone(),
                reason: DropReason::SmallCap,
            });
        } else {
            kept.push(s);
        }
    }
    drops.sort_by(|a, b| a.date.cmp(&b.date).then_with(|| a.asset_id.cmp(&b.asset_id)));
    Ok((kept, drops))
}

/// Replaces the final-day return of delisted assets with the reported
/// delisting return, or `cfg.delist_default` when none is reported.
pub fn apply_delisting(mut records: Vec<ScoredRecord>, cfg: &CleanConfig) -> Result<Vec<ScoredRecord>> {
    records.sort_by(|a, b| by_asset_date(&a.record, &b.record));
    check_delist_final(records.iter().map(|s| &s.record))?;
    for s in &mut records {
        if s.record.delist_flag {
            s.ret = Some(s.record.delist_return.unwrap_or(cfg.delist_default));
        }
    }
    Ok(records)
}

/// Clamps every unmasked return to `[-bound, bound]`.
pub fn winsorize(panel: &ReturnPanel, bound: f64) -> ReturnPanel {
    let mut p = panel.clone();
    let (vals, mask) = p.parts_mut();
    for (v, &m) in vals.iter_mut().zip(mask.iter()) {
        if m {
            *v = v.clamp(-bound, bound);
        }
    }
    p
}

/// Masks cells outside each asset's `[first_valid, last_valid]` window.
pub fn mask_boundaries(panel: &ReturnPanel) -> ReturnPanel {
    // Bounds are derived from the mask, so outside cells are already masked;
    // this re-derives them after any upstream edit.
    let mut p = panel.clone();
    p.refresh_bounds();
    p
}

/// Fills interior missing cells with the median of their country-day slice.
pub fn impute_country_day(panel: &ReturnPanel) -> ReturnPanel {
    let n = panel.n_assets();
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, a) in panel.assets().iter().enumerate() {
        groups.entry(a.country.as_str()).or_default().push(i);
    }
    let groups: Vec<Vec<usize>> = groups.into_values().collect();
    let fills: Vec<Vec<(usize, f64)>> = (0..panel.n_dates())
        .into_par_iter()
        .map(|t| {
            let mut out = Vec::new();
            for members in &groups {
                let vals: Vec<f64> = members.iter().filter_map(|&i| panel.get(t, i)).collect();
                let Some(med) = median(&vals) else { continue };
                for &i in members {
                    let inside = matches!((panel.first_valid(i), panel.last_valid(i)), (Some(a), Some(b)) if a <= t && t <= b);
                    if inside && !panel.is_valid(t, i) {
                        out.push((t * n + i, med));
                    }
                }
            }
            out
        })
        .collect();
    let mut p = panel.clone();
    let (vals, mask) = p.parts_mut();
    for (k, v) in fills.into_iter().flatten() {
        vals[k] = v;
        mask[k] = true;
    }
    p.refresh_bounds();
    p
}

/// Removes date rows without any unmasked cell.
pub fn drop_empty_dates(panel: &ReturnPanel) -> ReturnPanel {
    let keep: Vec<usize> = (0..panel.n_dates())
        .filter(|&t| (0..panel.n_assets()).any(|i| panel.is_valid(t, i)))
        .collect();
    panel.select_dates(&keep)
}

fn quantile_clamp(panel: &ReturnPanel, lo: f64, hi: f64) -> ReturnPanel {
    let mut pooled: Vec<f64> = panel
        .returns_raw()
        .iter()
        .zip(panel.mask())
        .filter(|(_, &m)| m)
        .map(|(v, _)| *v)
        .collect();
    pooled.sort_by(f64::total_cmp);
    let (Some(a), Some(b)) = (percentile_linear(&pooled, lo), percentile_linear(&pooled, hi)) else {
        return panel.clone();
    };
    let mut p = panel.clone();
    let (vals, mask) = p.parts_mut();
    for (v, &m) in vals.iter_mut().zip(mask.iter()) {
        if m {
            *v = v.clamp(a, b);
        }
    }
    p
}

fn assemble(raw: &[RawRecord], kept: &[ScoredRecord]) -> Result<ReturnPanel> {
    let dates: Vec<NaiveDate> = raw.iter().map(|r| r.date).collect::<BTreeSet<_>>().into_iter().collect();
    let mut countries: BTreeMap<&str, &str> = BTreeMap::new();
    for r in raw {
        countries.entry(r.asset_id.as_str()).or_insert(r.country.as_str());
    }
    let assets: Vec<AssetMeta> = countries
        .iter()
        .map(|(id, c)| AssetMeta {
            id: id.to_string(),
            country: c.to_string(),
        })
        .collect();
    let col: BTreeMap<&str, usize> = countries.keys().enumerate().map(|(i, id)| (*id, i)).collect();
    let n = assets.len();
    let row = |d: NaiveDate| dates.binary_search(&d).expect("date collected above");
    let mut returns = vec![0.0; dates.len() * n];
    let mut mask = vec![false; dates.len() * n];
    let mut caps = vec![f64::NAN; dates.len() * n];
    for r in raw {
        if let Some(c) = r.market_cap {
            caps[row(r.date) * n + col[r.asset_id.as_str()]] = c;
        }
    }
    for s in kept {
        if let Some(v) = s.ret {
            let k = row(s.record.date) * n + col[s.record.asset_id.as_str()];
            returns[k] = v;
            mask[k] = true;
        }
    }
    ReturnPanel::from_parts(dates, assets, returns, mask, caps)
}

/// Full pipeline: filter, delisting, returns, winsorization, boundary mask,
/// country-day imputation and removal of empty dates.
pub fn clean(records: Vec<RawRecord>, cfg: &CleanConfig) -> Result<CleanOutput> {
    let raw = records.clone();
    let (kept, drops) = filter_raw(records, cfg)?;
    let kept = apply_delisting(kept, cfg)?;
    let mut panel = assemble(&raw, &kept)?;
    if let Some((lo, hi)) = cfg.quantile_clamp {
        panel = quantile_clamp(&panel, lo, hi);
    }
    let panel = winsorize(&panel, cfg.winsor_bound);
    let panel = mask_boundaries(&panel);
    let panel = impute_country_day(&panel);
    let panel = drop_empty_dates(&panel);
    Ok(CleanOutput { panel, drops })
}
