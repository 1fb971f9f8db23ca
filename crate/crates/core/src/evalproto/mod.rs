//! Expanding-window evaluation: annual model vintages, first-year tuning,
//! forecast generation under the three foundation-model regimes, and the
//! forecasting metrics.

mod audit;
mod data;
mod metrics;
mod models;
mod runner;

pub use audit::{lookahead_audit, AuditReport, AuditVerdict, Mutation};
pub use data::{context_index, AssetHistory, TrainingData};
pub use metrics::{
    average_present, direction_metrics, predicted_up, r2_oos, score, write_metric_csv, yearly_average_report,
    AverageRow, Averaged, DirectionMetrics, MetricReport, MetricRow, MetricValues, StratumLabel, METRIC_COLUMNS,
};
pub use models::{Candidate, FamilyKind, Preset, Trained};
pub use runner::{run_model, run_regime, tune_first_year, Inputs, ModelRun, ModelSpec, TuneResult, VintageResult};

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::ops::Range;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{ReturnPanel, Stratum};
use crate::portfolio::{AssetForecast, DateForecasts};
use crate::synth::BankConfig;
use crate::tensorcore::Regime;

pub const WINDOW_SIZES: [usize; 4] = [5, 21, 252, 512];

/// Which series a vintage trains on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataScope {
    /// Assets of the evaluation country only.
    Local,
    /// Every asset in the panel.
    Global,
    /// Every asset plus the auxiliary series.
    Augmented,
    /// Every asset plus synthetic Gaussian-process series.
    SyntheticAugmented,
}

impl DataScope {
    pub fn as_str(self) -> &'static str {
        match self {
            DataScope::Local => "local",
            DataScope::Global => "global",
            DataScope::Augmented => "augmented",
            DataScope::SyntheticAugmented => "synthetic_augmented",
        }
    }
}

/// How a predicted direction is read off a record.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionRule {
    /// `up_prob > 0.5` when the model supplies one, else the sign of `y_pred`.
    #[default]
    UpProb,
    SignOfMean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSettings {
    pub count: usize,
    pub len: usize,
    pub bank: BankConfig,
}

impl Default for SyntheticSettings {
    fn default() -> Self {
        Self {
            count: 20,
            len: 512,
            bank: BankConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub window_sizes: Vec<usize>,
    pub train_start_year: i32,
    pub first_oos_year: i32,
    pub last_oos_year: i32,
    pub regime: Regime,
    pub scope: DataScope,
    /// Country whose assets are forecast (all assets when unset).
    #[serde(default)]
    pub eval_country: Option<String>,
    #[serde(default)]
    pub direction_rule: DirectionRule,
    /// Cap on lag-feature rows handed to a benchmark fit.
    #[serde(default = "default_max_train_pairs")]
    pub max_train_pairs: usize,
    /// Cap on validation contexts scored while tuning.
    #[serde(default = "default_max_valid_pairs")]
    pub max_valid_pairs: usize,
    #[serde(default = "default_valid_frac")]
    pub valid_frac: f64,
    #[serde(default)]
    pub synthetic: SyntheticSettings,
}

fn default_max_train_pairs() -> usize {
    20_000
}

fn default_max_valid_pairs() -> usize {
    2_000
}

fn default_valid_frac() -> f64 {
    0.1
}

impl ExperimentPlan {
    pub fn new(window_sizes: Vec<usize>, train_start_year: i32, first_oos_year: i32, last_oos_year: i32) -> Self {
        Self {
            window_sizes,
            train_start_year,
            first_oos_year,
            last_oos_year,
            regime: Regime::Scratch,
            scope: DataScope::Local,
            eval_country: None,
            direction_rule: DirectionRule::default(),
            max_train_pairs: default_max_train_pairs(),
            max_valid_pairs: default_max_valid_pairs(),
            valid_frac: default_valid_frac(),
            synthetic: SyntheticSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_start_year < self.first_oos_year && self.first_oos_year <= self.last_oos_year) {
            return Err(Error::Plan(format!(
                "years must satisfy train start {} < first out-of-sample {} <= last {}",
                self.train_start_year, self.first_oos_year, self.last_oos_year
            )));
        }
        if self.window_sizes.is_empty() {
            return Err(Error::Plan("no window sizes".into()));
        }
        if let Some(w) = self.window_sizes.iter().find(|w| !WINDOW_SIZES.contains(w)) {
            return Err(Error::Plan(format!("window size {w} not in {WINDOW_SIZES:?}")));
        }
        let distinct: BTreeSet<usize> = self.window_sizes.iter().copied().collect();
        if distinct.len() != self.window_sizes.len() {
            return Err(Error::Plan("repeated window size".into()));
        }
        if !(self.valid_frac > 0.0 && self.valid_frac < 1.0) || self.max_train_pairs == 0 || self.max_valid_pairs == 0 {
            return Err(Error::Plan("validation share and pair caps must be positive".into()));
        }
        Ok(())
    }
}

/// One annual model: trained on `train_rows`, evaluated on `eval_rows`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vintage {
    pub index: usize,
    pub cutoff_year: i32,
    pub eval_year: i32,
    pub train_rows: Range<usize>,
    pub eval_rows: Range<usize>,
    /// Last training date.
    pub cutoff: NaiveDate,
}

pub fn build_vintages(plan: &ExperimentPlan, panel: &ReturnPanel) -> Result<Vec<Vintage>> {
    plan.validate()?;
    let start = panel.year_range(plan.train_start_year).start;
    let mut out = Vec::new();
    for (index, y) in (plan.first_oos_year - 1..plan.last_oos_year).enumerate() {
        let end = panel.year_range(y).end;
        let train_rows = start..end.max(start);
        if train_rows.is_empty() || panel.year(train_rows.start) > y {
            return Err(Error::Plan(format!(
                "no training dates between {} and {y}",
                plan.train_start_year
            )));
        }
        let eval_rows = panel.year_range(y + 1);
        if eval_rows.is_empty() {
            return Err(Error::Plan(format!("panel has no dates in evaluation year {}", y + 1)));
        }
        out.push(Vintage {
            index,
            cutoff_year: y,
            eval_year: y + 1,
            cutoff: panel.dates()[train_rows.end - 1],
            train_rows,
            eval_rows,
        });
    }
    Ok(out)
}

/// A next-day forecast for `asset_id` whose realized return falls on `date`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub date: NaiveDate,
    pub asset_id: String,
    pub window: usize,
    pub model_id: String,
    pub regime: Regime,
    pub y_pred: f64,
    pub up_prob: Option<f64>,
    pub n_samples: usize,
    pub y_true: Option<f64>,
    /// Market-cap stratum on the day the forecast is issued.
    pub stratum: Option<Stratum>,
}

pub const FORECAST_COLUMNS: [&str; 10] = [
    "date",
    "asset_id",
    "window",
    "model",
    "regime",
    "y_pred",
    "up_prob",
    "n_samples",
    "y_true",
    "stratum",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_forecast_csv<W: Write>(w: W, records: &[ForecastRecord]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(FORECAST_COLUMNS)?;
    for r in records {
        wr.write_record([
            r.date.to_string(),
            r.asset_id.clone(),
            r.window.to_string(),
            r.model_id.clone(),
            r.regime.as_str().to_string(),
            r.y_pred.to_string(),
            opt(r.up_prob),
            r.n_samples.to_string(),
            opt(r.y_true),
            r.stratum.map(|s| s.as_str().to_string()).unwrap_or_default(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_forecast_csv<R: Read>(r: R) -> Result<Vec<ForecastRecord>> {
    let mut rd = csv::Reader::from_reader(r);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != FORECAST_COLUMNS {
        return Err(Error::Schema {
            row: 1,
            column: "header".into(),
            message: format!("expected {}", FORECAST_COLUMNS.join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let bad = |col: &str, msg: String| Error::Schema {
            row,
            column: col.into(),
            message: msg,
        };
        let num = |k: usize| -> Result<Option<f64>> {
            let s = &rec[k];
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse()
                    .map(Some)
                    .map_err(|e| bad(FORECAST_COLUMNS[k], format!("{e}")))
            }
        };
        let regime = match &rec[4] {
            "zero_shot" => Regime::ZeroShot,
            "fine_tune" => Regime::FineTune,
            "scratch" => Regime::Scratch,
            other => return Err(bad("regime", format!("unknown regime {other}"))),
        };
        let stratum = match &rec[9] {
            "" => None,
            "small" => Some(Stratum::Small),
            "mid" => Some(Stratum::Mid),
            "large" => Some(Stratum::Large),
            other => return Err(bad("stratum", format!("unknown stratum {other}"))),
        };
        out.push(ForecastRecord {
            date: NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d").map_err(|e| bad("date", e.to_string()))?,
            asset_id: rec[1].to_string(),
            window: rec[2].parse().map_err(|e| bad("window", format!("{e}")))?,
            model_id: rec[3].to_string(),
            regime,
            y_pred: num(5)?.ok_or_else(|| bad("y_pred", "missing".into()))?,
            up_prob: num(6)?,
            n_samples: rec[7].parse().map_err(|e| bad("n_samples", format!("{e}")))?,
            y_true: num(8)?,
            stratum,
        });
    }
    Ok(out)
}

/// Errors when two records share `(date, asset, window, model, regime)`.
pub fn check_unique(records: &[ForecastRecord]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for r in records {
        if !seen.insert((r.date, r.asset_id.as_str(), r.window, r.model_id.as_str(), r.regime)) {
            return Err(Error::Validation(format!(
                "duplicate forecast for {} on {} ({}, window {})",
                r.asset_id, r.date, r.model_id, r.window
            )));
        }
    }
    Ok(())
}

/// Groups one model's records by date for portfolio formation.
pub fn to_date_forecasts(records: &[ForecastRecord]) -> Vec<DateForecasts> {
    let mut by_date: BTreeMap<NaiveDate, Vec<AssetForecast>> = BTreeMap::new();
    for r in records {
        by_date.entry(r.date).or_default().push(AssetForecast {
            asset_id: r.asset_id.clone(),
            pred: r.y_pred,
            realized: r.y_true,
            stratum: r.stratum,
        });
    }
    by_date
        .into_iter()
        .map(|(date, entries)| DateForecasts { date, entries })
        .collect()
}

/// Stable 64-bit seed for a labelled stream, independent of platform.
pub fn derive_seed(base: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix(base ^ h)
}

pub(crate) fn splitmix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Calendar year of a record date.
pub fn record_year(r: &ForecastRecord) -> i32 {
    r.date.year()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::synth::{make_signal_panel, SignalConfig};

    pub(crate) fn record(year: i32, y_pred: f64, y_true: Option<f64>) -> ForecastRecord {
        ForecastRecord {
            date: NaiveDate::from_ymd_opt(year, 3, 1).unwrap(),
            asset_id: format!("A{}", (y_pred * 1e6) as i64),
            window: 5,
            model_id: "m".into(),
            regime: Regime::Scratch,
            y_pred,
            up_prob: None,
            n_samples: 1,
            y_true,
            stratum: None,
        }
    }

    pub(crate) fn small_panel() -> ReturnPanel {
        make_signal_panel(&SignalConfig {
            assets: 12,
            years: 4,
            start_year: 2000,
            ..SignalConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn vintage_enumeration() {
        let panel = make_signal_panel(&SignalConfig {
            assets: 10,
            years: 5,
            start_year: 1999,
            ..SignalConfig::default()
        })
        .unwrap();
        let plan = ExperimentPlan::new(vec![5], 1999, 2001, 2003);
        let v = build_vintages(&plan, &panel).unwrap();
        assert_eq!(v.iter().map(|x| x.cutoff_year).collect::<Vec<_>>(), vec![2000, 2001, 2002]);
        for x in &v {
            assert_eq!(x.train_rows.start, 0);
            assert!(panel.dates()[x.eval_rows.start] > x.cutoff);
            assert_eq!(x.train_rows.end, x.eval_rows.start);
            assert_eq!(panel.year(x.eval_rows.start), x.eval_year);
        }
        let one = ExperimentPlan::new(vec![5], 1999, 2002, 2002);
        assert_eq!(build_vintages(&one, &panel).unwrap().len(), 1);
        let empty = ExperimentPlan::new(vec![5], 1990, 1995, 1995);
        assert!(matches!(build_vintages(&empty, &panel), Err(Error::Plan(_))));
    }

    #[test]
    fn plan_validation() {
        assert!(ExperimentPlan::new(vec![5], 2001, 2001, 2002).validate().is_err());
        assert!(ExperimentPlan::new(vec![5], 2000, 2003, 2002).validate().is_err());
        assert!(ExperimentPlan::new(vec![], 2000, 2001, 2002).validate().is_err());
        assert!(ExperimentPlan::new(vec![7], 2000, 2001, 2002).validate().is_err());
        assert!(ExperimentPlan::new(vec![5, 21, 252, 512], 2000, 2001, 2001).validate().is_ok());
        let json = serde_json::to_string(&ExperimentPlan::new(vec![5], 2000, 2001, 2002)).unwrap();
        let back: ExperimentPlan = serde_json::from_str(&json).unwrap();
        assert_eq!(back.window_sizes, vec![5]);
    }

    #[test]
    fn forecast_csv_round_trip() {
        let mut a = record(2001, 0.01, Some(-0.02));
        a.up_prob = Some(0.45);
        a.stratum = Some(Stratum::Small);
        let b = record(2002, -0.03, None);
        let mut buf = Vec::new();
        write_forecast_csv(&mut buf, &[a.clone(), b.clone()]).unwrap();
        let back = read_forecast_csv(buf.as_slice()).unwrap();
        assert_eq!(back, vec![a.clone(), b]);
        assert!(check_unique(&[a.clone(), a]).is_err());
        let bad = "date,asset_id,window,model,regime,y_pred,up_prob,n_samples,y_true,stratum\n2001-13-01,A,5,m,scratch,0.1,,1,,\n";
        assert!(matches!(read_forecast_csv(bad.as_bytes()), Err(Error::Schema { row: 2, .. })));
    }

    #[test]
    fn seeds_are_stable_and_distinct() {
        assert_eq!(derive_seed(7, "chronos/tiny"), derive_seed(7, "chronos/tiny"));
        assert_ne!(derive_seed(7, "chronos/tiny"), derive_seed(8, "chronos/tiny"));
        assert_ne!(derive_seed(7, "a"), derive_seed(7, "b"));
    }
}
