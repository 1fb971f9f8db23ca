use serde::{Deserialize, Serialize};

use super::{PortfolioLedger, Traded};
use crate::panel::Stratum;

pub const MIXED_SMALL_BPS: f64 = 21.3;
pub const MIXED_LARGE_BPS: f64 = 11.2;
pub const MIXED_MID_BPS: f64 = 16.25;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostScenario {
    Fixed { bps: f64 },
    /// Per-stratum rates; assets without a stratum pay the mid rate.
    Mixed,
}

impl CostScenario {
    /// 0, 20 and 40 bps flat, then the mixed schedule.
    pub fn standard() -> Vec<CostScenario> {
        vec![
            CostScenario::Fixed { bps: 0.0 },
            CostScenario::Fixed { bps: 20.0 },
            CostScenario::Fixed { bps: 40.0 },
            CostScenario::Mixed,
        ]
    }

    pub fn name(&self) -> String {
        match self {
            CostScenario::Fixed { bps } => format!("{bps}bps"),
            CostScenario::Mixed => "mixed".into(),
        }
    }

    /// Cost per unit of notional traded, as a decimal.
    pub fn rate(&self, stratum: Stratum) -> f64 {
        let bps = match (self, stratum) {
            (CostScenario::Fixed { bps }, _) => *bps,
            (CostScenario::Mixed, Stratum::Small) => MIXED_SMALL_BPS,
            (CostScenario::Mixed, Stratum::Mid) => MIXED_MID_BPS,
            (CostScenario::Mixed, Stratum::Large) => MIXED_LARGE_BPS,
        };
        bps * 1e-4
    }

    /// Daily drag of one leg: traded notional times its rate, which is
    /// `2τ` times the traded-notional-weighted rate.
    pub fn drag(&self, traded: &Traded) -> f64 {
        traded.small * self.rate(Stratum::Small)
            + traded.mid * self.rate(Stratum::Mid)
            + traded.large * self.rate(Stratum::Large)
    }
}

/// Net daily returns under one cost scenario. `short` is the return of the
/// short position (the negated bottom-decile mean) after its drag.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetReturns {
    pub scenario: CostScenario,
    pub long_short: Vec<f64>,
    pub long: Vec<f64>,
    pub short: Vec<f64>,
}

pub fn apply_costs(ledger: &PortfolioLedger, scenario: CostScenario) -> NetReturns {
    let mut out = NetReturns {
        scenario,
        long_short: Vec::with_capacity(ledger.rows.len()),
        long: Vec::with_capacity(ledger.rows.len()),
        short: Vec::with_capacity(ledger.rows.len()),
    };
    for r in &ledger.rows {
        let dl = scenario.drag(&r.traded_long);
        let ds = scenario.drag(&r.traded_short);
        out.long_short.push(r.ls_gross - (dl + ds));
        out.long.push(r.long - dl);
        out.short.push(-r.short - ds);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::portfolio::tests::{day, id, random_days};
    use crate::portfolio::{build_ledger, perf_stats, AssetForecast, DateForecasts};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rotating(n_days: usize) -> PortfolioLedger {
        // Each day the ranking is reversed, so both legs are fully replaced.
        let days: Vec<DateForecasts> = (0..n_days)
            .map(|t| DateForecasts {
                date: day(t as u64),
                entries: (0..20)
                    .map(|i| {
                        let p = if t % 2 == 0 { i as f64 } else { -(i as f64) };
                        AssetForecast::new(id(i), p, Some(0.001 * i as f64))
                    })
                    .collect(),
            })
            .collect();
        build_ledger(&days)
    }

    #[test]
    fn zero_cost_is_gross() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = build_ledger(&random_days(&mut rng, 30, 20, 1.0));
        let net = apply_costs(&l, CostScenario::Fixed { bps: 0.0 });
        assert_eq!(net.long_short, l.ls_gross());
        assert_eq!(net.long, l.long());
        assert_eq!(net.short, l.short_position());
    }

    #[test]
    fn full_replacement_at_twenty_bps() {
        let l = rotating(4);
        let net = apply_costs(&l, CostScenario::Fixed { bps: 20.0 });
        for (t, r) in l.rows.iter().enumerate() {
            assert_eq!(r.turnover_long, 1.0);
            assert!((r.ls_gross - net.long_short[t] - 0.008).abs() < 1e-15);
            assert!((r.long - net.long[t] - 0.004).abs() < 1e-15);
        }
    }

    #[test]
    fn unchanged_membership_costs_nothing() {
        let days: Vec<DateForecasts> = (0..3)
            .map(|t| DateForecasts {
                date: day(t),
                entries: (0..20).map(|i| AssetForecast::new(id(i), i as f64, Some(0.01))).collect(),
            })
            .collect();
        let l = build_ledger(&days);
        let net = apply_costs(&l, CostScenario::Mixed);
        assert!(net.long_short[0] < l.rows[0].ls_gross);
        assert_eq!(net.long_short[1], l.rows[1].ls_gross);
        assert_eq!(net.long_short[2], l.rows[2].ls_gross);
    }

    #[test]
    fn mixed_rate_weights_by_stratum() {
        let t = Traded {
            small: 1.0,
            mid: 0.5,
            large: 0.5,
        };
        let want = (21.3 + 0.5 * 16.25 + 0.5 * 11.2) * 1e-4;
        assert!((CostScenario::Mixed.drag(&t) - want).abs() < 1e-15);
        assert!((CostScenario::Fixed { bps: 40.0 }.drag(&t) - 2.0 * 40e-4).abs() < 1e-15);
    }

    #[test]
    fn net_never_exceeds_gross_and_sharpe_falls_with_cost() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let l = build_ledger(&random_days(&mut rng, 120, 30, 0.5));
            let mut prev = f64::INFINITY;
            for bps in [0.0, 20.0, 40.0] {
                let net = apply_costs(&l, CostScenario::Fixed { bps });
                for (n, g) in net.long_short.iter().zip(l.ls_gross()) {
                    assert!(*n <= g);
                }
                let s = perf_stats(&net.long_short).unwrap().sharpe.unwrap();
                assert!(s <= prev, "seed {seed}: {s} > {prev}");
                prev = s;
            }
        }
    }
}
