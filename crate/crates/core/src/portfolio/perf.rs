use std::io::Write;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use super::{PortfolioLedger, N_DECILES};
use crate::error::{Error, Result};
use crate::stats;

pub const TRADING_DAYS: f64 = 252.0;
/// Years with fewer trading days than this are flagged.
pub const LOW_SAMPLE_DAYS: usize = 20;

/// Statistics of one daily return series. Returns are annualized
/// arithmetically (mean × 252) and the Sharpe ratio scales by √252.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesStats {
    pub ann_return_pct: f64,
    pub sd_pct: Option<f64>,
    pub sharpe: Option<f64>,
    pub daily_bps: f64,
    pub max_dd_pct: f64,
    pub max_dd_1day_pct: f64,
    pub skew: Option<f64>,
    /// Excess kurtosis unless converted with [`SeriesStats::with_raw_kurtosis`].
    pub kurtosis: Option<f64>,
}

impl SeriesStats {
    pub fn with_raw_kurtosis(mut self) -> Self {
        self.kurtosis = self.kurtosis.map(|k| k + 3.0);
        self
    }
}

pub fn perf_stats(returns: &[f64]) -> Result<SeriesStats> {
    let mean = stats::mean(returns).ok_or_else(|| Error::Validation("performance of an empty series".into()))?;
    if returns.iter().any(|r| !r.is_finite()) {
        return Err(Error::Validation("non-finite daily return".into()));
    }
    let sd = stats::sample_sd(returns);
    let sharpe = sd.filter(|&s| s > 0.0).map(|s| mean / s * TRADING_DAYS.sqrt());
    let mut wealth = 1.0f64;
    let mut peak = 1.0f64;
    let mut max_dd = 0.0f64;
    let mut max_1d = 0.0f64;
    for &r in returns {
        max_1d = max_1d.max(-r);
        wealth *= 1.0 + r;
        peak = peak.max(wealth);
        max_dd = max_dd.max((peak - wealth) / peak);
    }
    Ok(SeriesStats {
        ann_return_pct: mean * TRADING_DAYS * 100.0,
        sd_pct: sd.map(|s| s * TRADING_DAYS.sqrt() * 100.0),
        sharpe,
        daily_bps: mean * 1e4,
        max_dd_pct: (max_dd * 100.0).min(100.0),
        max_dd_1day_pct: (max_1d * 100.0).min(100.0),
        skew: stats::skewness(returns),
        kurtosis: stats::excess_kurtosis(returns),
    })
}

/// The (long-short, long, short) triplet reported per cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerfStats {
    pub long_short: SeriesStats,
    pub long: SeriesStats,
    pub short: SeriesStats,
}

impl PerfStats {
    pub fn gross(ledger: &PortfolioLedger) -> Result<Self> {
        Ok(Self {
            long_short: perf_stats(&ledger.ls_gross())?,
            long: perf_stats(&ledger.long())?,
            short: perf_stats(&ledger.short_position())?,
        })
    }

    pub fn net(net: &super::NetReturns) -> Result<Self> {
        Ok(Self {
            long_short: perf_stats(&net.long_short)?,
            long: perf_stats(&net.long)?,
            short: perf_stats(&net.short)?,
        })
    }

    pub fn with_raw_kurtosis(self) -> Self {
        Self {
            long_short: self.long_short.with_raw_kurtosis(),
            long: self.long.with_raw_kurtosis(),
            short: self.short.with_raw_kurtosis(),
        }
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per metric with `long_short,long,short` columns.
pub fn write_perf_csv<W: Write>(w: W, p: &PerfStats) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["metric", "long_short", "long", "short"])?;
    let rows: [(&str, fn(&SeriesStats) -> Option<f64>); 8] = [
        ("ann_return_pct", |s| Some(s.ann_return_pct)),
        ("sd_pct", |s| s.sd_pct),
        ("sharpe", |s| s.sharpe),
        ("daily_bps", |s| Some(s.daily_bps)),
        ("max_dd_pct", |s| Some(s.max_dd_pct)),
        ("max_dd_1day_pct", |s| Some(s.max_dd_1day_pct)),
        ("skew", |s| s.skew),
        ("kurtosis", |s| s.kurtosis),
    ];
    for (name, f) in rows {
        wr.write_record([name.to_string(), cell(f(&p.long_short)), cell(f(&p.long)), cell(f(&p.short))])?;
    }
    wr.flush()?;
    Ok(())
}

/// Annualized mean return (%) of each decile, Low to High, plus High − Low.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpreadTable {
    pub rows: Vec<(String, Option<f64>)>,
}

impl SpreadTable {
    pub fn labels() -> Vec<String> {
        let mut v = vec!["Low".to_string()];
        v.extend((2..N_DECILES).map(|k| k.to_string()));
        v.push("High".into());
        v.push("H-L".into());
        v
    }

    pub fn high_minus_low(&self) -> Option<f64> {
        self.rows.last().and_then(|r| r.1)
    }
}

pub fn spread_table(ledger: &PortfolioLedger) -> SpreadTable {
    let mut values: Vec<Option<f64>> = (0..N_DECILES)
        .map(|k| {
            let xs: Vec<f64> = ledger.rows.iter().filter_map(|r| r.deciles[k]).collect();
            stats::mean(&xs).map(|m| m * TRADING_DAYS * 100.0)
        })
        .collect();
    let hl = match (values[N_DECILES - 1], values[0]) {
        (Some(h), Some(l)) => Some(h - l),
        _ => None,
    };
    values.push(hl);
    SpreadTable {
        rows: SpreadTable::labels().into_iter().zip(values).collect(),
    }
}

pub fn write_spread_csv<W: Write>(w: W, table: &SpreadTable) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["decile", "ann_return_pct"])?;
    for (label, v) in &table.rows {
        wr.write_record([label.clone(), cell(*v)])?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct YearSharpe {
    pub year: i32,
    pub sharpe: Option<f64>,
    pub n_days: usize,
    pub low_sample: bool,
}

/// Sharpe ratio within each calendar year present in `dates`.
pub fn yearly_sharpe_series(dates: &[NaiveDate], returns: &[f64]) -> Result<Vec<YearSharpe>> {
    if dates.len() != returns.len() {
        return Err(Error::dim("yearly returns", dates.len(), returns.len()));
    }
    let mut out: Vec<YearSharpe> = Vec::new();
    let mut start = 0;
    while start < dates.len() {
        let year = dates[start].year();
        let mut end = start;
        while end < dates.len() && dates[end].year() == year {
            end += 1;
        }
        let slice = &returns[start..end];
        out.push(YearSharpe {
            year,
            sharpe: perf_stats(slice)?.sharpe,
            n_days: slice.len(),
            low_sample: slice.len() < LOW_SAMPLE_DAYS,
        });
        start = end;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::portfolio::tests::{day, id, random_days};
    use crate::portfolio::{build_ledger, AssetForecast, DateForecasts};
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    /// Straightforward recomputation with textbook formulas.
    fn brute(r: &[f64]) -> [f64; 8] {
        let n = r.len() as f64;
        let m = r.iter().sum::<f64>() / n;
        let s = (r.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let mut w = vec![1.0];
        for x in r {
            w.push(w.last().unwrap() * (1.0 + x));
        }
        let mut dd = 0.0f64;
        for i in 0..w.len() {
            for j in i..w.len() {
                dd = dd.max((w[i] - w[j]) / w[i]);
            }
        }
        let one = r.iter().fold(0.0f64, |a, x| a.max(-x));
        let skew = n / ((n - 1.0) * (n - 2.0)) * r.iter().map(|x| ((x - m) / s).powi(3)).sum::<f64>();
        let kurt = n * (n + 1.0) / ((n - 1.0) * (n - 2.0) * (n - 3.0)) * r.iter().map(|x| ((x - m) / s).powi(4)).sum::<f64>()
            - 3.0 * (n - 1.0).powi(2) / ((n - 2.0) * (n - 3.0));
        [
            m * 252.0 * 100.0,
            s * 252f64.sqrt() * 100.0,
            m / s * 252f64.sqrt(),
            m * 1e4,
            dd * 100.0,
            one * 100.0,
            skew,
            kurt,
        ]
    }

    fn fields(s: &SeriesStats) -> [f64; 8] {
        [
            s.ann_return_pct,
            s.sd_pct.unwrap(),
            s.sharpe.unwrap(),
            s.daily_bps,
            s.max_dd_pct,
            s.max_dd_1day_pct,
            s.skew.unwrap(),
            s.kurtosis.unwrap(),
        ]
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let r: Vec<f64> = (0..1000)
                .map(|_| 0.0003 + 0.012 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let got = fields(&perf_stats(&r).unwrap());
            let want = brute(&r);
            for k in 0..8 {
                assert!(close(got[k], want[k], 1e-10), "field {k}: {} vs {}", got[k], want[k]);
            }
            assert!(got[5] <= got[4] + 1e-9);
        }
    }

    #[test]
    fn worked_examples() {
        let s = perf_stats(&[0.10, -0.50, 0.10]).unwrap();
        assert!((s.max_dd_pct - 50.0).abs() < 1e-12);
        assert!((s.max_dd_1day_pct - 50.0).abs() < 1e-12);
        let z = perf_stats(&[0.0; 30]).unwrap();
        assert_eq!((z.ann_return_pct, z.sd_pct, z.daily_bps, z.max_dd_pct), (0.0, Some(0.0), 0.0, 0.0));
        assert_eq!(z.sharpe, None);
        let r: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 0.011 } else { -0.009 }).collect();
        let s = perf_stats(&r).unwrap();
        let want = 0.001 / 0.01 * 252f64.sqrt();
        assert!((s.daily_bps - 10.0).abs() < 1e-9);
        assert!((s.sharpe.unwrap() - want * (999.0f64 / 1000.0).sqrt()).abs() < 1e-9);
        assert!((want - 1.587).abs() < 1e-3);
        assert!(perf_stats(&[]).is_err());
        let k = perf_stats(&r).unwrap();
        assert_eq!(k.with_raw_kurtosis().kurtosis.unwrap(), k.kurtosis.unwrap() + 3.0);
    }

    #[test]
    fn drawdown_stays_in_range() {
        let s = perf_stats(&[0.5, -1.5, 0.2]).unwrap();
        assert_eq!(s.max_dd_pct, 100.0);
        assert!(s.max_dd_1day_pct <= s.max_dd_pct);
    }

    #[test]
    fn spread_matches_long_short() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let l = build_ledger(&random_days(&mut rng, 200, 25, 1.0));
        let t = spread_table(&l);
        assert_eq!(t.rows.len(), 11);
        assert_eq!(t.rows[0].0, "Low");
        assert_eq!(t.rows[9].0, "High");
        let ls = perf_stats(&l.ls_gross()).unwrap().ann_return_pct;
        assert!((t.high_minus_low().unwrap() - ls).abs() < 1e-9);
        for r in &l.rows {
            assert!((r.ls_gross - (r.long - r.short)).abs() <= 1e-12);
        }
    }

    #[test]
    fn monotone_fixture_is_strictly_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let days: Vec<DateForecasts> = (0..100)
            .map(|t| DateForecasts {
                date: day(t),
                entries: (0..40)
                    .map(|i| {
                        let r = 0.001 * i as f64 + 0.0001 * rng.random_range(-1.0..1.0);
                        AssetForecast::new(id(i), r, Some(r))
                    })
                    .collect(),
            })
            .collect();
        let t = spread_table(&build_ledger(&days));
        for w in t.rows[..10].windows(2) {
            assert!(w[1].1.unwrap() > w[0].1.unwrap());
        }
    }

    #[test]
    fn singleton_buckets_are_asset_means() {
        let days: Vec<DateForecasts> = (0..5)
            .map(|t| DateForecasts {
                date: day(t),
                entries: (0..10)
                    .map(|i| AssetForecast::new(id(i), i as f64, Some(0.001 * (i as f64) * (t as f64 + 1.0))))
                    .collect(),
            })
            .collect();
        let t = spread_table(&build_ledger(&days));
        for i in 0..10 {
            let mean = (1..=5).map(|k| 0.001 * i as f64 * k as f64).sum::<f64>() / 5.0;
            assert!((t.rows[i].1.unwrap() - mean * 25200.0).abs() < 1e-9);
        }
    }

    #[test]
    fn random_forecasts_sit_inside_the_permutation_null() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let days = random_days(&mut rng, 10_000, 20, 0.0);
        let observed = spread_table(&build_ledger(&days)).high_minus_low().unwrap();
        let mut null = Vec::new();
        for _ in 0..30 {
            let shuffled: Vec<DateForecasts> = days
                .iter()
                .map(|d| {
                    let mut preds: Vec<f64> = d.entries.iter().map(|e| e.pred).collect();
                    preds.shuffle(&mut rng);
                    DateForecasts {
                        date: d.date,
                        entries: d
                            .entries
                            .iter()
                            .zip(preds)
                            .map(|(e, p)| AssetForecast { pred: p, ..e.clone() })
                            .collect(),
                    }
                })
                .collect();
            null.push(spread_table(&build_ledger(&shuffled)).high_minus_low().unwrap());
        }
        let sd = stats::sample_sd(&null).unwrap();
        assert!(observed.abs() < 2.0 * sd, "{observed} vs null sd {sd}");
    }

    #[test]
    fn yearly_sharpes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let start = NaiveDate::from_ymd_opt(2001, 1, 1).unwrap();
        let dates: Vec<NaiveDate> = (0..3650).map(|t| start + chrono::Days::new(t)).collect();
        let r: Vec<f64> = (0..3650)
            .map(|_| 0.0005 + 0.01 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let ys = yearly_sharpe_series(&dates, &r).unwrap();
        assert_eq!(ys.len(), 10);
        let vals: Vec<f64> = ys.iter().map(|y| y.sharpe.unwrap()).collect();
        let full = perf_stats(&r).unwrap().sharpe.unwrap();
        let se = stats::sample_sd(&vals).unwrap() / (vals.len() as f64).sqrt();
        assert!((stats::mean(&vals).unwrap() - full).abs() < 2.0 * se);

        let one = yearly_sharpe_series(&dates[..300], &r[..300]).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].sharpe, perf_stats(&r[..300]).unwrap().sharpe);
        let gap = [dates[0], NaiveDate::from_ymd_opt(2003, 5, 1).unwrap()];
        let ys = yearly_sharpe_series(&gap, &[0.01, 0.02]).unwrap();
        assert_eq!(ys.iter().map(|y| y.year).collect::<Vec<_>>(), vec![2001, 2003]);
        assert!(ys.iter().all(|y| y.low_sample));
    }

    #[test]
    fn perf_csv_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let l = build_ledger(&random_days(&mut rng, 40, 20, 1.0));
        let p = PerfStats::gross(&l).unwrap();
        let mut buf = Vec::new();
        write_perf_csv(&mut buf, &p).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 9);
        assert!(text.starts_with("metric,long_short,long,short\nann_return_pct,"));
        let mut buf = Vec::new();
        write_spread_csv(&mut buf, &spread_table(&l)).unwrap();
        assert!(String::from_utf8(buf).unwrap().trim_end().ends_with(&format!(
            "H-L,{}",
            spread_table(&l).high_minus_low().unwrap()
        )));
    }
}
