use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use anyhow::{ensure, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tsfb_core::evalproto::derive_seed;
use tsfb_core::panel::{write_raw_csv, RawRecord, ReturnPanel};
use tsfb_core::synth::{
    gp_sample, make_signal_panel, sample_kernel_spec, trading_calendar, BankConfig, KernelSpec, SignalConfig,
    TRADING_DAYS_PER_YEAR,
};

/// What `tsfb synth` generates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SynthConfig {
    /// Pattern-plus-noise panel.
    Signal {
        #[serde(default)]
        config: SignalConfig,
    },
    /// One Gaussian-process draw per asset, scaled to return magnitudes.
    Gp {
        assets: usize,
        years: usize,
        start_year: i32,
        #[serde(default = "default_country")]
        country: String,
        #[serde(default = "default_scale")]
        scale: f64,
        #[serde(default = "default_cap")]
        market_cap: f64,
        #[serde(default)]
        bank: BankConfig,
    },
}

fn default_country() -> String {
    "US".into()
}

fn default_scale() -> f64 {
    0.01
}

fn default_cap() -> f64 {
    1e9
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig::Signal {
            config: SignalConfig::default(),
        }
    }
}

#[derive(Serialize)]
struct GpSeries {
    asset_id: String,
    seed: u64,
    spec: KernelSpec,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    seed: u64,
    config: &'a SynthConfig,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    series: Vec<GpSeries>,
}

/// Raw records whose prices compound the panel returns from a base of 100.
pub fn panel_to_records(panel: &ReturnPanel) -> Vec<RawRecord> {
    let mut out = Vec::with_capacity(panel.n_dates() * panel.n_assets());
    let mut price = vec![100.0f64; panel.n_assets()];
    for (t, d) in panel.dates().iter().enumerate() {
        for (i, a) in panel.assets().iter().enumerate() {
            let Some(r) = panel.get(t, i) else { continue };
            price[i] *= 1.0 + r;
            out.push(RawRecord {
                date: *d,
                asset_id: a.id.clone(),
                country: a.country.clone(),
                price: Some(price[i]),
                dividend: 0.0,
                risk_free_daily: 0.0,
                market_cap: panel.market_cap(t, i),
                delist_flag: false,
                delist_return: None,
            });
        }
    }
    out
}

/// Writes `panel.csv` in the raw record schema and a `synth.json` sidecar
/// with the seeds and kernel specs used.
pub fn cmd_synth(cfg: &SynthConfig, seed: u64, out_dir: &Path) -> Result<usize> {
    fs::create_dir_all(out_dir)?;
    let (records, series) = match cfg {
        SynthConfig::Signal { config } => {
            let panel = make_signal_panel(&SignalConfig {
                seed: derive_seed(seed, "panel") ^ config.seed,
                ..config.clone()
            })?;
            (panel_to_records(&panel), Vec::new())
        }
        SynthConfig::Gp {
            assets,
            years,
            start_year,
            country,
            scale,
            market_cap,
            bank,
        } => {
            ensure!(*assets > 0 && *years > 0, "gp panel needs assets and years");
            ensure!(scale.is_finite() && *scale > 0.0, "scale must be positive");
            let dates = trading_calendar(*start_year, *years, TRADING_DAYS_PER_YEAR);
            let n = dates.len();
            let bank = BankConfig {
                grid_len: n,
                ..bank.clone()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "gp-panel"));
            let mut records = Vec::with_capacity(n * assets);
            let mut series = Vec::with_capacity(*assets);
            for i in 0..*assets {
                let spec = sample_kernel_spec(&mut rng, &bank)?;
                let s = gp_sample(&spec, n, rng.random())?;
                let id = format!("G{i:04}");
                let mut price = 100.0f64;
                for (d, v) in dates.iter().zip(&s.values) {
                    price *= 1.0 + (v * scale).max(-0.99);
                    records.push(RawRecord {
                        date: *d,
                        asset_id: id.clone(),
                        country: country.clone(),
                        price: Some(price),
                        dividend: 0.0,
                        risk_free_daily: 0.0,
                        market_cap: Some(*market_cap),
                        delist_flag: false,
                        delist_return: None,
                    });
                }
                series.push(GpSeries {
                    asset_id: id,
                    seed: s.seed,
                    spec: s.spec,
                });
            }
            records.sort_by(|a, b| (a.date, &a.asset_id).cmp(&(b.date, &b.asset_id)));
            (records, series)
        }
    };
    write_raw_csv(BufWriter::new(File::create(out_dir.join("panel.csv"))?), &records)?;
    let side = Sidecar {
        seed,
        config: cfg,
        series,
    };
    fs::write(out_dir.join("synth.json"), serde_json::to_vec_pretty(&side)?)?;
    println!("wrote {} records to {}", records.len(), out_dir.join("panel.csv").display());
    Ok(records.len())
}
