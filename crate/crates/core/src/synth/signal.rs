use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{AssetMeta, ReturnPanel};

pub const TRADING_DAYS_PER_YEAR: usize = 252;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    Sine,
    Ar1,
    Step,
}

/// Deterministic-pattern panel for experiments and tests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalConfig {
    pub assets: usize,
    pub years: usize,
    pub start_year: i32,
    pub pattern: Pattern,
    pub amplitude: f64,
    /// Absolute noise standard deviation.
    pub noise_sd: f64,
    /// Per-asset periods are drawn uniformly from this range (sine and step).
    pub period: (f64, f64),
    /// AR(1) coefficient.
    pub coef: f64,
    /// Log-uniform market-cap range.
    pub market_cap: (f64, f64),
    pub country: String,
    pub seed: u64,
}

impl Default for SignalConfig {
    fn default() -> Self {
        Self {
            assets: 100,
            years: 6,
            start_year: 2000,
            pattern: Pattern::Sine,
            amplitude: 0.01,
            noise_sd: 0.003,
            period: (20.0, 20.0),
            coef: 0.9,
            market_cap: (1e8, 1e11),
            country: "US".into(),
            seed: 0,
        }
    }
}

/// The first `days` weekdays of each calendar year from `start_year`.
pub fn trading_calendar(start_year: i32, years: usize, days: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(years * days);
    for y in 0..years as i32 {
        let mut d = NaiveDate::from_ymd_opt(start_year + y, 1, 1).expect("valid year");
        let mut taken = 0;
        while taken < days && d.year() == start_year + y {
            if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
                out.push(d);
                taken += 1;
            }
            d = d.succ_opt().expect("date in range");
        }
    }
    out
}

/// Builds a fully unmasked panel of `252 * years` days where each asset's
/// return is its pattern plus Gaussian noise.
pub fn make_signal_panel(cfg: &SignalConfig) -> Result<ReturnPanel> {
    if cfg.assets < 10 || cfg.years < 2 {
        return Err(Error::Config(format!(
            "signal panel needs at least 10 assets and 2 years, got {} and {}",
            cfg.assets, cfg.years
        )));
    }
    if !(cfg.noise_sd >= 0.0) || !(cfg.period.0 > 0.0) || cfg.period.1 < cfg.period.0 {
        return Err(Error::Config("invalid signal noise or period".into()));
    }
    let dates = trading_calendar(cfg.start_year, cfg.years, TRADING_DAYS_PER_YEAR);
    let t_len = dates.len();
    let n = cfg.assets;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_sd.max(f64::MIN_POSITIVE)).expect("finite sd");
    let mut returns = vec![0.0; t_len * n];
    let mut caps = vec![0.0; t_len * n];
    let mut assets = Vec::with_capacity(n);
    for i in 0..n {
        assets.push(AssetMeta {
            id: format!("S{i:04}"),
            country: cfg.country.clone(),
        });
        let period = if cfg.period.1 > cfg.period.0 {
            rng.random_range(cfg.period.0..cfg.period.1)
        } else {
            cfg.period.0
        };
        let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let (lo, hi) = cfg.market_cap;
        let cap = (rng.random_range(lo.ln()..=hi.ln())).exp();
        let mut prev = 0.0;
        for t in 0..t_len {
            let eps = if cfg.noise_sd > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            let v = match cfg.pattern {
                Pattern::Sine => cfg.amplitude * (std::f64::consts::TAU * t as f64 / period + phase).sin() + eps,
                Pattern::Ar1 => cfg.coef * prev + eps,
                Pattern::Step => {
                    let cycle = ((t as f64 + phase / std::f64::consts::TAU * period) / period).floor() as i64;
                    let level = if cycle.rem_euclid(2) == 0 { cfg.amplitude } else { -cfg.amplitude };
                    level + eps
                }
            };
            prev = v;
            returns[t * n + i] = v.clamp(-1.0, 1.0);
            caps[t * n + i] = cap;
        }
    }
    ReturnPanel::from_parts(dates, assets, returns, vec![true; t_len * n], caps)
}
