use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use tsfb_core::panel::{clean, read_raw_csv, write_cache, write_drop_log, CleanConfig, ReturnPanel};

/// Observation and security counts per country plus a total row.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Coverage {
    pub country: String,
    pub observations: usize,
    pub securities: usize,
}

pub fn coverage(panel: &ReturnPanel) -> Vec<Coverage> {
    let mut by: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for (i, a) in panel.assets().iter().enumerate() {
        let obs = (0..panel.n_dates()).filter(|&t| panel.is_valid(t, i)).count();
        let e = by.entry(a.country.as_str()).or_default();
        e.0 += obs;
        e.1 += usize::from(obs > 0);
    }
    let mut out: Vec<Coverage> = by
        .into_iter()
        .map(|(c, (o, s))| Coverage {
            country: c.to_string(),
            observations: o,
            securities: s,
        })
        .collect();
    out.push(Coverage {
        country: "total".into(),
        observations: out.iter().map(|c| c.observations).sum(),
        securities: out.iter().map(|c| c.securities).sum(),
    });
    out
}

/// Cleans a raw record CSV into `panel.tsfb`, `drops.csv` and
/// `coverage.csv`.
pub fn cmd_clean(input: &Path, out_dir: &Path, cfg: &CleanConfig) -> Result<Vec<Coverage>> {
    let f = File::open(input).with_context(|| format!("opening {}", input.display()))?;
    let records = read_raw_csv(BufReader::new(f))?;
    let out = clean(records, cfg)?;
    fs::create_dir_all(out_dir)?;
    write_cache(BufWriter::new(File::create(out_dir.join("panel.tsfb"))?), &out.panel)?;
    write_drop_log(BufWriter::new(File::create(out_dir.join("drops.csv"))?), &out.drops)?;
    let cov = coverage(&out.panel);
    let mut wr = csv::Writer::from_path(out_dir.join("coverage.csv"))?;
    for c in &cov {
        wr.serialize(c)?;
    }
    wr.flush()?;
    println!("{:<10} {:>14} {:>11}", "country", "observations", "securities");
    for c in &cov {
        println!("{:<10} {:>14} {:>11}", c.country, c.observations, c.securities);
    }
    println!("dropped records: {}", out.drops.len());
    Ok(cov)
}
