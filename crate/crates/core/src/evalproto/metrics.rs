use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{DirectionRule, ForecastRecord};
use crate::error::Result;

/// Out-of-sample R² in percent against a zero forecast; `None` when there
/// is nothing to score or every realized value is zero.
pub fn r2_oos(pairs: &[(f64, f64)]) -> Option<f64> {
    let mut sse = 0.0;
    let mut sst = 0.0;
    for &(y, p) in pairs {
        sse += (y - p) * (y - p);
        sst += y * y;
    }
    if pairs.is_empty() || sst == 0.0 {
        None
    } else {
        Some(100.0 * (1.0 - sse / sst))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionMetrics {
    pub overall_acc: f64,
    pub up_acc: Option<f64>,
    pub down_acc: Option<f64>,
    pub macro_f1: f64,
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let d = 2 * tp + fp + fn_;
    if d == 0 || tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / d as f64
    }
}

/// Accuracies in percent and macro-F1 over `(realized_up, predicted_up)`.
pub fn direction_metrics(calls: &[(bool, bool)]) -> Option<DirectionMetrics> {
    if calls.is_empty() {
        return None;
    }
    let (mut tp, mut tn, mut fp, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for &(actual, pred) in calls {
        match (actual, pred) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
        }
    }
    let pct = |num: usize, den: usize| (den > 0).then(|| 100.0 * num as f64 / den as f64);
    Some(DirectionMetrics {
        overall_acc: 100.0 * (tp + tn) as f64 / calls.len() as f64,
        up_acc: pct(tp, tp + fn_),
        down_acc: pct(tn, tn + fp),
        macro_f1: 0.5 * (f1(tp, fp, fn_) + f1(tn, fn_, fp)),
    })
}

/// Predicted direction of one record under `rule`.
pub fn predicted_up(r: &ForecastRecord, rule: DirectionRule) -> bool {
    match (rule, r.up_prob) {
        (DirectionRule::UpProb, Some(p)) => p > 0.5,
        _ => r.y_pred > 0.0,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub r2_oos: Option<f64>,
    pub overall_acc: Option<f64>,
    pub up_acc: Option<f64>,
    pub down_acc: Option<f64>,
    pub macro_f1: Option<f64>,
}

/// Metrics of every record carrying a realized value.
pub fn score(records: &[&ForecastRecord], rule: DirectionRule) -> MetricValues {
    let scored: Vec<&&ForecastRecord> = records.iter().filter(|r| r.y_true.is_some()).collect();
    let pairs: Vec<(f64, f64)> = scored.iter().map(|r| (r.y_true.unwrap(), r.y_pred)).collect();
    let calls: Vec<(bool, bool)> = scored
        .iter()
        .map(|r| (r.y_true.unwrap() > 0.0, predicted_up(r, rule)))
        .collect();
    let d = direction_metrics(&calls);
    MetricValues {
        r2_oos: r2_oos(&pairs),
        overall_acc: d.map(|d| d.overall_acc),
        up_acc: d.and_then(|d| d.up_acc),
        down_acc: d.and_then(|d| d.down_acc),
        macro_f1: d.map(|d| d.macro_f1),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StratumLabel {
    Full,
    Large,
    Small,
}

impl StratumLabel {
    pub const ALL: [StratumLabel; 3] = [StratumLabel::Full, StratumLabel::Large, StratumLabel::Small];

    pub fn as_str(self) -> &'static str {
        match self {
            StratumLabel::Full => "full",
            StratumLabel::Large => "large",
            StratumLabel::Small => "small",
        }
    }

    fn admits(self, r: &ForecastRecord) -> bool {
        use crate::panel::Stratum;
        match self {
            StratumLabel::Full => true,
            StratumLabel::Large => r.stratum == Some(Stratum::Large),
            StratumLabel::Small => r.stratum == Some(Stratum::Small),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub year: i32,
    pub stratum: StratumLabel,
    pub window: usize,
    pub model: String,
    pub values: MetricValues,
}

/// Unweighted mean over years of one metric, with the number of years that
/// had a value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Averaged {
    pub value: Option<f64>,
    pub n_years: usize,
}

pub fn average_present(values: &[Option<f64>]) -> Averaged {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    Averaged {
        value: crate::stats::mean(&present),
        n_years: present.len(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AverageRow {
    pub stratum: StratumLabel,
    pub window: usize,
    pub model: String,
    pub r2_oos: Averaged,
    pub overall_acc: Averaged,
    pub up_acc: Averaged,
    pub down_acc: Averaged,
    pub macro_f1: Averaged,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub yearly: Vec<MetricRow>,
    pub averages: Vec<AverageRow>,
}

pub const METRIC_COLUMNS: [&str; 9] = [
    "year",
    "stratum",
    "window",
    "model",
    "r2_oos",
    "overall_acc",
    "up_acc",
    "down_acc",
    "macro_f1",
];

/// Scores records per calendar year, stratum, window and model, then
/// averages the yearly values of each cell.
pub fn yearly_average_report(records: &[ForecastRecord], rule: DirectionRule) -> MetricReport {
    use chrono::Datelike;
    let mut groups: BTreeMap<(String, usize, i32), Vec<&ForecastRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.model_id.clone(), r.window, r.date.year()))
            .or_default()
            .push(r);
    }
    let mut report = MetricReport::default();
    let mut cells: BTreeMap<(String, usize, StratumLabel), Vec<MetricValues>> = BTreeMap::new();
    for ((model, window, year), recs) in &groups {
        for stratum in StratumLabel::ALL {
            let sub: Vec<&ForecastRecord> = recs.iter().copied().filter(|r| stratum.admits(r)).collect();
            let values = score(&sub, rule);
            cells
                .entry((model.clone(), *window, stratum))
                .or_default()
                .push(values);
            report.yearly.push(MetricRow {
                year: *year,
                stratum,
                window: *window,
                model: model.clone(),
                values,
            });
        }
    }
    for ((model, window, stratum), vals) in cells {
        let col = |f: fn(&MetricValues) -> Option<f64>| average_present(&vals.iter().map(f).collect::<Vec<_>>());
        report.averages.push(AverageRow {
            stratum,
            window,
            model,
            r2_oos: col(|v| v.r2_oos),
            overall_acc: col(|v| v.overall_acc),
            up_acc: col(|v| v.up_acc),
            down_acc: col(|v| v.down_acc),
            macro_f1: col(|v| v.macro_f1),
        });
    }
    report
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Yearly rows followed by one `avg` row per cell.
pub fn write_metric_csv<W: Write>(w: W, report: &MetricReport) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(METRIC_COLUMNS)?;
    for r in &report.yearly {
        let v = &r.values;
        wr.write_record([
            r.year.to_string(),
            r.stratum.as_str().to_string(),
            r.window.to_string(),
            r.model.clone(),
            cell(v.r2_oos),
            cell(v.overall_acc),
            cell(v.up_acc),
            cell(v.down_acc),
            cell(v.macro_f1),
        ])?;
    }
    for a in &report.averages {
        wr.write_record([
            "avg".to_string(),
            a.stratum.as_str().to_string(),
            a.window.to_string(),
            a.model.clone(),
            cell(a.r2_oos.value),
            cell(a.overall_acc.value),
            cell(a.up_acc.value),
            cell(a.down_acc.value),
            cell(a.macro_f1.value),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalproto::tests::record;
    use crate::panel::Stratum;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_r2(y: &[f64], p: &[f64]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..y.len() {
            num += (y[i] - p[i]).powi(2);
            den += y[i].powi(2);
        }
        100.0 - 100.0 * num / den
    }

    /// Per-class confusion counts by explicit filtering.
    fn brute_direction(a: &[bool], p: &[bool]) -> (f64, f64, f64, f64) {
        let n = a.len();
        let idx: Vec<usize> = (0..n).collect();
        let correct = idx.iter().filter(|&&i| a[i] == p[i]).count();
        let ups: Vec<usize> = idx.iter().copied().filter(|&i| a[i]).collect();
        let downs: Vec<usize> = idx.iter().copied().filter(|&i| !a[i]).collect();
        let acc = |set: &[usize]| set.iter().filter(|&&i| a[i] == p[i]).count() as f64 / set.len() as f64 * 100.0;
        let class_f1 = |c: bool| {
            let tp = idx.iter().filter(|&&i| a[i] == c && p[i] == c).count() as f64;
            let pred = idx.iter().filter(|&&i| p[i] == c).count() as f64;
            let act = idx.iter().filter(|&&i| a[i] == c).count() as f64;
            if tp == 0.0 {
                0.0
            } else {
                let prec = tp / pred;
                let rec = tp / act;
                2.0 * prec * rec / (prec + rec)
            }
        };
        (
            correct as f64 / n as f64 * 100.0,
            if ups.is_empty() { f64::NAN } else { acc(&ups) },
            if downs.is_empty() { f64::NAN } else { acc(&downs) },
            0.5 * (class_f1(true) + class_f1(false)),
        )
    }

    #[test]
    fn r2_examples() {
        assert_eq!(r2_oos(&[(0.01, 0.01), (-0.02, -0.02)]), Some(100.0));
        assert_eq!(r2_oos(&[(0.01, 0.0), (-0.02, 0.0)]), Some(0.0));
        let r = r2_oos(&[(0.01, 0.0), (-0.02, -0.01)]).unwrap();
        assert!((r - 60.0).abs() < 1e-9, "{r}");
        assert_eq!(r2_oos(&[(0.0, 0.3)]), None);
        assert_eq!(r2_oos(&[]), None);
    }

    #[test]
    fn direction_examples() {
        let perfect = direction_metrics(&[(true, true), (false, false)]).unwrap();
        assert_eq!(
            (perfect.overall_acc, perfect.up_acc, perfect.down_acc, perfect.macro_f1),
            (100.0, Some(100.0), Some(100.0), 1.0)
        );
        let d = direction_metrics(&[(true, true), (true, false), (false, true), (false, false)]).unwrap();
        assert_eq!((d.overall_acc, d.up_acc, d.down_acc, d.macro_f1), (50.0, Some(50.0), Some(50.0), 0.5));
        let d = direction_metrics(&[(true, true), (false, true), (true, false)]).unwrap();
        assert!((d.overall_acc - 100.0 / 3.0).abs() < 1e-12);
        assert_eq!(d.up_acc, Some(50.0));
        assert_eq!(d.down_acc, Some(0.0));
        assert!(direction_metrics(&[]).is_none());
    }

    #[test]
    fn oracles_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let n = rng.random_range(1..40);
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-0.05..0.05)).collect();
            let p: Vec<f64> = (0..n).map(|_| rng.random_range(-0.05..0.05)).collect();
            let pairs: Vec<(f64, f64)> = y.iter().copied().zip(p.iter().copied()).collect();
            let got = r2_oos(&pairs).unwrap();
            assert!((got - brute_r2(&y, &p)).abs() <= 1e-12 * (1.0 + got.abs()));
            let a: Vec<bool> = y.iter().map(|v| *v > 0.0).collect();
            let b: Vec<bool> = p.iter().map(|v| *v > 0.0).collect();
            let calls: Vec<(bool, bool)> = a.iter().copied().zip(b.iter().copied()).collect();
            let d = direction_metrics(&calls).unwrap();
            let (o, u, dn, f) = brute_direction(&a, &b);
            assert!((d.overall_acc - o).abs() < 1e-12);
            assert!(d.up_acc.map_or(u.is_nan(), |v| (v - u).abs() < 1e-12));
            assert!(d.down_acc.map_or(dn.is_nan(), |v| (v - dn).abs() < 1e-12));
            assert!((d.macro_f1 - f).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&d.macro_f1));
        }
    }

    #[test]
    fn up_probability_overrides_sign() {
        let mut r = record(2001, 0.01, Some(0.02));
        r.up_prob = Some(0.3);
        assert!(!predicted_up(&r, DirectionRule::UpProb));
        assert!(predicted_up(&r, DirectionRule::SignOfMean));
        r.up_prob = None;
        assert!(predicted_up(&r, DirectionRule::UpProb));
    }

    #[test]
    fn averages_skip_missing_years() {
        assert_eq!(average_present(&[Some(0.5), Some(-0.1)]).value.map(|v| (v * 1e12).round() / 1e12), Some(0.2));
        assert_eq!(average_present(&[Some(0.4)]).value, Some(0.4));
        let a = average_present(&[None, Some(0.4)]);
        assert_eq!((a.value, a.n_years), (Some(0.4), 1));
    }

    #[test]
    fn report_groups_by_year_and_stratum() {
        let mut recs = vec![
            record(2001, 0.01, Some(0.01)),
            record(2001, -0.01, Some(0.02)),
            record(2002, 0.0, Some(0.0)),
        ];
        recs[0].stratum = Some(Stratum::Large);
        recs[1].stratum = Some(Stratum::Small);
        let rep = yearly_average_report(&recs, DirectionRule::UpProb);
        assert_eq!(rep.yearly.len(), 6);
        let full_2001 = rep
            .yearly
            .iter()
            .find(|r| r.year == 2001 && r.stratum == StratumLabel::Full)
            .unwrap();
        let want = r2_oos(&[(0.01, 0.01), (0.02, -0.01)]).unwrap();
        assert_eq!(full_2001.values.r2_oos, Some(want));
        let avg = rep.averages.iter().find(|a| a.stratum == StratumLabel::Full).unwrap();
        assert_eq!(avg.r2_oos.n_years, 1);
        assert_eq!(avg.r2_oos.value, Some(want));
        assert_eq!(avg.overall_acc.n_years, 2);
        let mut buf = Vec::new();
        write_metric_csv(&mut buf, &rep).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("year,stratum,window,model,r2_oos,overall_acc,up_acc,down_acc,macro_f1\n"));
        assert_eq!(text.lines().count(), 1 + 6 + 3);
    }
}
