//! Daily-rebalanced equal-weight decile portfolios, transaction costs and
//! the performance statistics reported for them.

mod costs;
mod perf;

pub use costs::{apply_costs, CostScenario, NetReturns, MIXED_LARGE_BPS, MIXED_MID_BPS, MIXED_SMALL_BPS};
pub use perf::{
    perf_stats, spread_table, write_perf_csv, write_spread_csv, yearly_sharpe_series, PerfStats, SeriesStats,
    SpreadTable, YearSharpe, LOW_SAMPLE_DAYS, TRADING_DAYS,
};

use std::collections::BTreeMap;
use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::panel::Stratum;

pub const N_DECILES: usize = 10;

/// One asset's forecast on a date together with the realized next-day
/// return it is scored against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssetForecast {
    pub asset_id: String,
    pub pred: f64,
    pub realized: Option<f64>,
    pub stratum: Option<Stratum>,
}

impl AssetForecast {
    pub fn new(asset_id: impl Into<String>, pred: f64, realized: Option<f64>) -> Self {
        Self {
            asset_id: asset_id.into(),
            pred,
            realized,
            stratum: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DateForecasts {
    pub date: NaiveDate,
    pub entries: Vec<AssetForecast>,
}

/// Bucket 0 is Low, bucket 9 is High. Members are listed in rank order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecileAssignment {
    pub date: NaiveDate,
    pub buckets: Vec<Vec<String>>,
}

/// Ranks the date's assets by prediction (ties by asset id) and cuts them
/// into ten buckets whose sizes differ by at most one, extra members going
/// to the lowest buckets. Returns `None` below ten assets.
pub fn sort_deciles(date: NaiveDate, entries: &[AssetForecast]) -> Option<DecileAssignment> {
    rank_buckets(entries).map(|b| DecileAssignment {
        date,
        buckets: b
            .into_iter()
            .map(|m| m.into_iter().map(|i| entries[i].asset_id.clone()).collect())
            .collect(),
    })
}

fn rank_buckets(entries: &[AssetForecast]) -> Option<Vec<Vec<usize>>> {
    let n = entries.len();
    if n < N_DECILES {
        return None;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        entries[a]
            .pred
            .total_cmp(&entries[b].pred)
            .then_with(|| entries[a].asset_id.cmp(&entries[b].asset_id))
    });
    let (q, rem) = (n / N_DECILES, n % N_DECILES);
    let mut out = Vec::with_capacity(N_DECILES);
    let mut start = 0;
    for k in 0..N_DECILES {
        let size = q + usize::from(k < rem);
        out.push(order[start..start + size].to_vec());
        start += size;
    }
    Some(out)
}

/// Equal-weight mean of the members' realized returns, summed in asset-id
/// order. Members without a realized return are left out.
pub fn leg_return(members: &[(&str, Option<f64>)]) -> Option<f64> {
    let mut present: Vec<(&str, f64)> = members.iter().filter_map(|&(id, r)| r.map(|v| (id, v))).collect();
    if present.is_empty() {
        return None;
    }
    present.sort_by(|a, b| a.0.cmp(b.0));
    Some(present.iter().map(|p| p.1).sum::<f64>() / present.len() as f64)
}

/// Notional traded on one leg per stratum, as a fraction of the leg's book
/// (`Σ|Δw|`, so full replacement trades 2).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Traded {
    pub small: f64,
    pub mid: f64,
    pub large: f64,
}

impl Traded {
    fn add(&mut self, stratum: Option<Stratum>, amount: f64) {
        match stratum {
            Some(Stratum::Small) => self.small += amount,
            Some(Stratum::Large) => self.large += amount,
            Some(Stratum::Mid) | None => self.mid += amount,
        }
    }

    pub fn total(&self) -> f64 {
        self.small + self.mid + self.large
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub date: NaiveDate,
    /// Top-decile mean return.
    pub long: f64,
    /// Bottom-decile mean return (the leg that is sold short).
    pub short: f64,
    pub ls_gross: f64,
    /// Mean realized return of every decile, Low first.
    pub deciles: Vec<Option<f64>>,
    pub turnover_long: f64,
    pub turnover_short: f64,
    pub traded_long: Traded,
    pub traded_short: Traded,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PortfolioLedger {
    pub rows: Vec<LedgerRow>,
    /// Dates left out, with the reason.
    pub skipped: Vec<(NaiveDate, String)>,
}

impl PortfolioLedger {
    pub fn dates(&self) -> Vec<NaiveDate> {
        self.rows.iter().map(|r| r.date).collect()
    }

    pub fn ls_gross(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.ls_gross).collect()
    }

    pub fn long(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.long).collect()
    }

    /// Return of the short position, i.e. the negated bottom-decile mean.
    pub fn short_position(&self) -> Vec<f64> {
        self.rows.iter().map(|r| -r.short).collect()
    }
}

type Book = BTreeMap<String, (f64, Option<Stratum>)>;

/// One-way turnover and per-stratum traded notional moving from `old` to
/// `new`. An empty `old` book counts as full establishment.
fn rebalance(old: &Book, new: &Book) -> (f64, Traded) {
    let mut traded = Traded::default();
    if old.is_empty() {
        for (w, s) in new.values() {
            traded.add(*s, 2.0 * w);
        }
        return (1.0, traded);
    }
    let mut sum = 0.0;
    for (id, (w, s)) in new {
        let prev = old.get(id).map_or(0.0, |p| p.0);
        let d = (w - prev).abs();
        sum += d;
        traded.add(*s, d);
    }
    for (id, (w, s)) in old {
        if !new.contains_key(id) {
            sum += w;
            traded.add(*s, *w);
        }
    }
    (0.5 * sum, traded)
}

fn book(entries: &[AssetForecast], members: &[usize]) -> Book {
    let held: Vec<usize> = members.iter().copied().filter(|&i| entries[i].realized.is_some()).collect();
    let w = 1.0 / held.len() as f64;
    held.into_iter()
        .map(|i| (entries[i].asset_id.clone(), (w, entries[i].stratum)))
        .collect()
}

/// Sequential scan over dates: sort, take top and bottom deciles, and track
/// turnover against the previous held books.
pub fn build_ledger(days: &[DateForecasts]) -> PortfolioLedger {
    let mut ledger = PortfolioLedger::default();
    let mut held_long = Book::new();
    let mut held_short = Book::new();
    for day in days {
        let Some(buckets) = rank_buckets(&day.entries) else {
            log::info!("{}: {} assets, fewer than ten; date skipped", day.date, day.entries.len());
            ledger
                .skipped
                .push((day.date, format!("{} assets with forecasts", day.entries.len())));
            continue;
        };
        let deciles: Vec<Option<f64>> = buckets
            .iter()
            .map(|m| {
                let members: Vec<(&str, Option<f64>)> = m
                    .iter()
                    .map(|&i| (day.entries[i].asset_id.as_str(), day.entries[i].realized))
                    .collect();
                leg_return(&members)
            })
            .collect();
        let (Some(long), Some(short)) = (deciles[N_DECILES - 1], deciles[0]) else {
            log::info!("{}: an extreme decile has no realized returns; date skipped", day.date);
            ledger.skipped.push((day.date, "empty leg".into()));
            continue;
        };
        let new_long = book(&day.entries, &buckets[N_DECILES - 1]);
        let new_short = book(&day.entries, &buckets[0]);
        let (turnover_long, traded_long) = rebalance(&held_long, &new_long);
        let (turnover_short, traded_short) = rebalance(&held_short, &new_short);
        held_long = new_long;
        held_short = new_short;
        ledger.rows.push(LedgerRow {
            date: day.date,
            long,
            short,
            ls_gross: long - short,
            deciles,
            turnover_long,
            turnover_short,
            traded_long,
            traded_short,
        });
    }
    ledger
}

/// Ledger CSV with one net long-short column per scenario.
pub fn write_ledger_csv<W: Write>(w: W, ledger: &PortfolioLedger, scenarios: &[CostScenario]) -> Result<()> {
    let nets: Vec<NetReturns> = scenarios.iter().map(|s| apply_costs(ledger, *s)).collect();
    let mut wr = csv::Writer::from_writer(w);
    let mut header: Vec<String> = ["date", "ls_gross", "long", "short", "turnover_long", "turnover_short"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(scenarios.iter().map(|s| format!("ls_net_{}", s.name())));
    wr.write_record(&header)?;
    for (t, r) in ledger.rows.iter().enumerate() {
        let mut rec = vec![
            r.date.to_string(),
            r.ls_gross.to_string(),
            r.long.to_string(),
            r.short.to_string(),
            r.turnover_long.to_string(),
            r.turnover_short.to_string(),
        ];
        rec.extend(nets.iter().map(|n| n.long_short[t].to_string()));
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    pub(crate) fn day(t: u64) -> NaiveDate {
        NaiveDate::from_ymd_opt(2001, 1, 1).unwrap() + chrono::Days::new(t)
    }

    pub(crate) fn id(i: usize) -> String {
        format!("A{i:03}")
    }

    /// Random forecasts carrying a weak signal about realized returns.
    pub(crate) fn random_days(rng: &mut ChaCha8Rng, n_days: usize, n_assets: usize, signal: f64) -> Vec<DateForecasts> {
        let strata = [Stratum::Small, Stratum::Mid, Stratum::Large];
        (0..n_days)
            .map(|t| DateForecasts {
                date: day(t as u64),
                entries: (0..n_assets)
                    .map(|i| {
                        let r: f64 = 0.01 * rng.sample::<f64, _>(StandardNormal);
                        let noise: f64 = rng.sample(StandardNormal);
                        AssetForecast {
                            asset_id: id(i),
                            pred: signal * r + 0.01 * noise,
                            realized: Some(r),
                            stratum: Some(strata[i % 3]),
                        }
                    })
                    .collect(),
            })
            .collect()
    }

    #[test]
    fn twenty_assets_pair_up() {
        let entries: Vec<AssetForecast> = (1..=20).map(|i| AssetForecast::new(id(i), i as f64, None)).collect();
        let d = sort_deciles(day(0), &entries).unwrap();
        assert_eq!(d.buckets[9], vec![id(19), id(20)]);
        assert_eq!(d.buckets[0], vec![id(1), id(2)]);
    }

    #[test]
    fn ties_fall_back_to_asset_id() {
        let entries: Vec<AssetForecast> = (0..12).rev().map(|i| AssetForecast::new(id(i), 0.5, None)).collect();
        let d = sort_deciles(day(0), &entries).unwrap();
        let flat: Vec<String> = d.buckets.concat();
        assert_eq!(flat, (0..12).map(id).collect::<Vec<_>>());
        assert_eq!(d.buckets[0].len(), 2);
        assert_eq!(d.buckets[1].len(), 2);
        assert_eq!(d.buckets[2].len(), 1);
        let ten: Vec<AssetForecast> = (0..10).map(|i| AssetForecast::new(id(i), i as f64, None)).collect();
        assert!(sort_deciles(day(0), &ten).unwrap().buckets.iter().all(|b| b.len() == 1));
        assert!(sort_deciles(day(0), &ten[..9]).is_none());
    }

    #[test]
    fn partition_holds_for_any_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 10..60 {
            let entries: Vec<AssetForecast> = (0..n)
                .map(|i| AssetForecast::new(id(i), rng.random_range(-1.0..1.0), None))
                .collect();
            let d = sort_deciles(day(0), &entries).unwrap();
            let sizes: Vec<usize> = d.buckets.iter().map(Vec::len).collect();
            assert_eq!(sizes.iter().sum::<usize>(), n);
            assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            let mut all = d.buckets.concat();
            all.sort();
            all.dedup();
            assert_eq!(all.len(), n);
        }
    }

    #[test]
    fn leg_means() {
        assert_eq!(leg_return(&[("a", Some(0.02)), ("b", Some(0.04))]), Some(0.03));
        assert_eq!(leg_return(&[("a", Some(0.07))]), Some(0.07));
        assert_eq!(leg_return(&[("a", Some(0.07)), ("b", None)]), Some(0.07));
        assert_eq!(leg_return(&[("a", None)]), None);
        let top = leg_return(&[("a", Some(0.10))]).unwrap();
        let bottom = leg_return(&[("b", Some(0.01))]).unwrap();
        assert!((top - bottom - 0.09).abs() < 1e-15);
    }

    #[test]
    fn skips_thin_dates_and_empty_legs() {
        let thin = DateForecasts {
            date: day(0),
            entries: (0..5).map(|i| AssetForecast::new(id(i), i as f64, Some(0.0))).collect(),
        };
        let no_realized = DateForecasts {
            date: day(1),
            entries: (0..10)
                .map(|i| AssetForecast::new(id(i), i as f64, if i == 0 { None } else { Some(0.0) }))
                .collect(),
        };
        let l = build_ledger(&[thin, no_realized]);
        assert!(l.rows.is_empty());
        assert_eq!(l.skipped.len(), 2);
    }

    #[test]
    fn turnover_accounting() {
        let mk = |t: u64, preds: &[f64]| DateForecasts {
            date: day(t),
            entries: preds
                .iter()
                .enumerate()
                .map(|(i, &p)| AssetForecast::new(id(i), p, Some(0.01 * i as f64)))
                .collect(),
        };
        let up: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let down: Vec<f64> = (0..20).map(|i| -(i as f64)).collect();
        let l = build_ledger(&[mk(0, &up), mk(1, &up), mk(2, &down)]);
        assert_eq!(l.rows[0].turnover_long, 1.0);
        assert_eq!(l.rows[0].traded_long.total(), 2.0);
        assert_eq!(l.rows[1].turnover_long, 0.0);
        assert_eq!(l.rows[1].turnover_short, 0.0);
        assert_eq!(l.rows[2].turnover_long, 1.0);
        assert_eq!(l.rows[2].traded_short.total(), 2.0);
        for r in &l.rows {
            assert!((0.0..=1.0).contains(&r.turnover_long));
        }
    }

    #[test]
    fn negation_and_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let days = random_days(&mut rng, 50, 30, 1.0);
        let base = build_ledger(&days);
        let neg: Vec<DateForecasts> = days
            .iter()
            .map(|d| DateForecasts {
                date: d.date,
                entries: d
                    .entries
                    .iter()
                    .map(|e| AssetForecast {
                        pred: -e.pred,
                        ..e.clone()
                    })
                    .collect(),
            })
            .collect();
        let nl = build_ledger(&neg);
        for (a, b) in base.rows.iter().zip(&nl.rows) {
            assert_eq!(a.ls_gross, -b.ls_gross);
            assert_eq!(a.long, b.short);
        }
        let scaled: Vec<DateForecasts> = days
            .iter()
            .map(|d| DateForecasts {
                date: d.date,
                entries: d
                    .entries
                    .iter()
                    .map(|e| AssetForecast {
                        pred: 3.7 * e.pred,
                        ..e.clone()
                    })
                    .collect(),
            })
            .collect();
        assert_eq!(build_ledger(&scaled), base);
    }

    #[test]
    fn ledger_csv_header() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = build_ledger(&random_days(&mut rng, 3, 10, 1.0));
        let mut buf = Vec::new();
        write_ledger_csv(&mut buf, &l, &CostScenario::standard()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "date,ls_gross,long,short,turnover_long,turnover_short,ls_net_0bps,ls_net_20bps,ls_net_40bps,ls_net_mixed"
        );
        assert_eq!(text.lines().count(), 4);
    }
}
