use std::fs::{self, File};
use std::io::BufReader;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use tsfb_core::portfolio::{perf_stats, write_perf_csv, PerfStats, SeriesStats};

use crate::manifest::{JobStatus, Manifest};

/// Running sum of `ln(1 + r)`; `None` once wealth is wiped out.
pub fn cumulative_log_returns(returns: &[f64]) -> Vec<Option<f64>> {
    let mut acc = Some(0.0);
    returns
        .iter()
        .map(|&r| {
            acc = acc.and_then(|a| (r > -1.0).then(|| a + r.ln_1p()));
            acc
        })
        .collect()
}

/// One printed and exported row per completed job.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DigestRow {
    pub model: String,
    pub window: usize,
    pub r2_full: Option<f64>,
    pub r2_large: Option<f64>,
    pub r2_small: Option<f64>,
    pub acc_full: Option<f64>,
    pub f1_full: Option<f64>,
    pub sharpe_ls: Option<f64>,
    pub sharpe_long: Option<f64>,
    pub sharpe_short: Option<f64>,
    /// `(scenario, net long-short Sharpe)` in configured order.
    pub net_sharpe: Vec<(String, Option<f64>)>,
}

struct Ledger {
    dates: Vec<String>,
    ls_gross: Vec<f64>,
    long: Vec<f64>,
    short: Vec<f64>,
    net: Vec<(String, Vec<f64>)>,
}

fn read_ledger(path: &Path) -> Result<Ledger> {
    let mut rd = csv::Reader::from_reader(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ));
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    let col = |name: &str| header.iter().position(|h| h == name).with_context(|| format!("{} lacks {name}", path.display()));
    let (i_ls, i_long, i_short) = (col("ls_gross")?, col("long")?, col("short")?);
    let net_cols: Vec<(usize, String)> = header
        .iter()
        .enumerate()
        .filter_map(|(k, h)| h.strip_prefix("ls_net_").map(|s| (k, s.to_string())))
        .collect();
    let mut l = Ledger {
        dates: Vec::new(),
        ls_gross: Vec::new(),
        long: Vec::new(),
        short: Vec::new(),
        net: net_cols.iter().map(|(_, n)| (n.clone(), Vec::new())).collect(),
    };
    for rec in rd.records() {
        let rec = rec?;
        let num = |k: usize| -> Result<f64> { Ok(rec[k].parse::<f64>()?) };
        l.dates.push(rec[0].to_string());
        l.ls_gross.push(num(i_ls)?);
        l.long.push(num(i_long)?);
        l.short.push(-num(i_short)?);
        for (j, (k, _)) in net_cols.iter().enumerate() {
            l.net[j].1.push(num(*k)?);
        }
    }
    Ok(l)
}

fn avg_metric(metrics_csv: &str, stratum: &str, column: &str) -> Option<f64> {
    let mut rd = csv::Reader::from_reader(metrics_csv.as_bytes());
    let header = rd.headers().ok()?.clone();
    let k = header.iter().position(|h| h == column)?;
    rd.records()
        .flatten()
        .find(|r| &r[0] == "avg" && &r[1] == stratum)
        .and_then(|r| r[k].parse().ok())
}

fn fmt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into())
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn print_digest(rows: &[DigestRow]) {
    let Some(first) = rows.first() else { return };
    let mut head = format!(
        "{:<40} {:>6} {:>8} {:>8} {:>8} {:>7} {:>6} {:>7} {:>7} {:>7}",
        "model", "window", "R2 full", "R2 large", "R2 small", "acc", "F1", "SR ls", "SR long", "SR shrt"
    );
    for (name, _) in &first.net_sharpe {
        head.push_str(&format!(" {:>8}", format!("SR {name}")));
    }
    println!("{head}");
    for r in rows {
        let mut line = format!(
            "{:<40} {:>6} {:>8} {:>8} {:>8} {:>7} {:>6} {:>7} {:>7} {:>7}",
            r.model,
            r.window,
            fmt(r.r2_full),
            fmt(r.r2_large),
            fmt(r.r2_small),
            fmt(r.acc_full),
            fmt(r.f1_full.map(|f| f * 100.0)),
            fmt(r.sharpe_ls),
            fmt(r.sharpe_long),
            fmt(r.sharpe_short)
        );
        for (_, s) in &r.net_sharpe {
            line.push_str(&format!(" {:>8}", fmt(*s)));
        }
        println!("{line}");
    }
}

/// Merges the completed jobs of a run into `report/`: concatenated metric
/// table, gross performance triplets, the net Sharpe grid, cumulative
/// log-return series per job and a digest table.
pub fn build_report(root: &Path, raw_kurtosis: bool) -> Result<Vec<DigestRow>> {
    let manifest = Manifest::read(root)?;
    let done: Vec<_> = manifest.jobs.iter().filter(|j| j.status == JobStatus::Complete).collect();
    if done.is_empty() {
        bail!("no completed jobs in {}", root.display());
    }
    let out = root.join("report");
    if out.exists() {
        fs::remove_dir_all(&out)?;
    }
    fs::create_dir_all(out.join("cumulative"))?;
    fs::create_dir_all(out.join("perf"))?;

    let mut metrics = String::new();
    let mut digest = Vec::new();
    for entry in &done {
        let job = &entry.job;
        let dir = root.join(&job.dir);
        let m = fs::read_to_string(dir.join("metrics.csv")).with_context(|| format!("metrics of {}", job.dir))?;
        let mut lines = m.lines();
        let header = lines.next().unwrap_or_default();
        if metrics.is_empty() {
            metrics.push_str(header);
            metrics.push('\n');
        }
        for l in lines {
            metrics.push_str(l);
            metrics.push('\n');
        }

        let ledger = read_ledger(&dir.join("ledger.csv"))?;
        let name = job.dir.trim_start_matches("jobs/").replace('/', "__");
        let mut wr = csv::Writer::from_path(out.join("cumulative").join(format!("{name}.csv")))?;
        let mut hdr = vec!["date".to_string(), "ls_gross".to_string()];
        hdr.extend(ledger.net.iter().map(|(n, _)| format!("ls_net_{n}")));
        wr.write_record(&hdr)?;
        let gross_cum = cumulative_log_returns(&ledger.ls_gross);
        let net_cum: Vec<Vec<Option<f64>>> = ledger.net.iter().map(|(_, r)| cumulative_log_returns(r)).collect();
        for (t, d) in ledger.dates.iter().enumerate() {
            let mut row = vec![d.clone(), cell(gross_cum[t])];
            row.extend(net_cum.iter().map(|c| cell(c[t])));
            wr.write_record(&row)?;
        }
        wr.flush()?;

        let stats = |r: &[f64]| -> Option<SeriesStats> {
            let s = perf_stats(r).ok()?;
            Some(if raw_kurtosis { s.with_raw_kurtosis() } else { s })
        };
        let gross = match (stats(&ledger.ls_gross), stats(&ledger.long), stats(&ledger.short)) {
            (Some(long_short), Some(long), Some(short)) => Some(PerfStats { long_short, long, short }),
            _ => None,
        };
        if let Some(p) = &gross {
            write_perf_csv(File::create(out.join("perf").join(format!("{name}.csv")))?, p)?;
        }
        digest.push(DigestRow {
            model: job.key.clone(),
            window: job.window,
            r2_full: avg_metric(&m, "full", "r2_oos"),
            r2_large: avg_metric(&m, "large", "r2_oos"),
            r2_small: avg_metric(&m, "small", "r2_oos"),
            acc_full: avg_metric(&m, "full", "overall_acc"),
            f1_full: avg_metric(&m, "full", "macro_f1"),
            sharpe_ls: gross.and_then(|p| p.long_short.sharpe),
            sharpe_long: gross.and_then(|p| p.long.sharpe),
            sharpe_short: gross.and_then(|p| p.short.sharpe),
            net_sharpe: ledger
                .net
                .iter()
                .map(|(n, r)| (n.clone(), stats(r).and_then(|s| s.sharpe)))
                .collect(),
        });
    }
    fs::write(out.join("metrics.csv"), metrics)?;

    let mut wr = csv::Writer::from_path(out.join("digest.csv"))?;
    let mut hdr: Vec<String> = [
        "model",
        "window",
        "r2_full",
        "r2_large",
        "r2_small",
        "acc_full",
        "macro_f1_full",
        "sharpe_ls",
        "sharpe_long",
        "sharpe_short",
    ]
    .map(String::from)
    .to_vec();
    hdr.extend(digest[0].net_sharpe.iter().map(|(n, _)| format!("sharpe_net_{n}")));
    wr.write_record(&hdr)?;
    for r in &digest {
        let mut row = vec![
            r.model.clone(),
            r.window.to_string(),
            cell(r.r2_full),
            cell(r.r2_large),
            cell(r.r2_small),
            cell(r.acc_full),
            cell(r.f1_full),
            cell(r.sharpe_ls),
            cell(r.sharpe_long),
            cell(r.sharpe_short),
        ];
        row.extend(r.net_sharpe.iter().map(|(_, s)| cell(*s)));
        wr.write_record(&row)?;
    }
    wr.flush()?;

    let mut wr = csv::Writer::from_path(out.join("sharpe_grid.csv"))?;
    let mut hdr = vec!["model".to_string(), "window".to_string()];
    hdr.extend(digest[0].net_sharpe.iter().map(|(n, _)| n.clone()));
    wr.write_record(&hdr)?;
    for r in &digest {
        let mut row = vec![r.model.clone(), r.window.to_string()];
        row.extend(r.net_sharpe.iter().map(|(_, s)| cell(*s)));
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(digest)
}

/// `tsfb report`: rebuilds `report/` from the artifacts of a finished run.
pub fn cmd_report(root: &Path, raw_kurtosis: Option<bool>) -> Result<Vec<DigestRow>> {
    if !root.is_dir() {
        bail!("{} is not a directory", root.display());
    }
    let raw = match raw_kurtosis {
        Some(r) => r,
        None => fs::read(root.join("config.json"))
            .ok()
            .and_then(|b| serde_json::from_slice::<serde_json::Value>(&b).ok())
            .and_then(|v| v.get("raw_kurtosis").and_then(serde_json::Value::as_bool))
            .unwrap_or(false),
    };
    let digest = build_report(root, raw)?;
    print_digest(&digest);
    Ok(digest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cumulative_log_return_example() {
        let c = cumulative_log_returns(&[0.01, 0.01]);
        assert!((c[0].unwrap() - 0.00995033085).abs() < 1e-8);
        assert!((c[1].unwrap() - 0.0199006617).abs() < 1e-8);
        assert_eq!(cumulative_log_returns(&[0.1, -1.0, 0.1])[1..], [None, None]);
    }

    #[test]
    fn empty_dir_is_an_error() {
        let d = tempfile::tempdir().unwrap();
        assert!(cmd_report(d.path(), None).is_err());
        assert!(cmd_report(&d.path().join("missing"), None).is_err());
    }
}
