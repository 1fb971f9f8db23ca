use proptest::prelude::*;

use tsfb_core::evalproto::{run_model, score, to_date_forecasts, Candidate, ExperimentPlan, Inputs, ModelSpec};
use tsfb_core::linreg::LinearFamily;
use tsfb_core::panel::{read_cache, write_cache};
use tsfb_core::portfolio::{apply_costs, build_ledger, perf_stats, CostScenario, PerfStats};
use tsfb_core::synth::{make_signal_panel, SignalConfig};

fn panel(seed: u64) -> tsfb_core::panel::ReturnPanel {
    make_signal_panel(&SignalConfig {
        assets: 20,
        years: 3,
        seed,
        ..SignalConfig::default()
    })
    .unwrap()
}

fn ridge() -> ModelSpec {
    ModelSpec::single(
        "ridge_h",
        Candidate::Linear {
            kind: LinearFamily::RidgeH,
            alpha: 1e-4,
            l1_ratio: 0.5,
        },
    )
}

#[test]
fn cache_round_trip_preserves_the_panel() {
    let p = panel(3);
    let mut buf = Vec::new();
    write_cache(&mut buf, &p).unwrap();
    assert_eq!(read_cache(buf.as_slice()).unwrap(), p);
}

#[test]
fn linear_benchmark_recovers_signal_and_trades_it() {
    let p = panel(11);
    let plan = ExperimentPlan::new(vec![21], 2000, 2001, 2002);
    let inputs = Inputs {
        panel: &p,
        auxiliary: &[],
        base: None,
        seed: 1,
    };
    let run = run_model(&plan, &ridge(), 21, &inputs).unwrap();
    assert_eq!(run.vintages.len(), 2);
    let records = run.records();
    let refs: Vec<_> = records.iter().collect();
    let m = score(&refs, plan.direction_rule);
    assert!(m.r2_oos.unwrap() > 0.0, "{m:?}");
    assert!(m.overall_acc.unwrap() > 60.0, "{m:?}");

    let ledger = build_ledger(&to_date_forecasts(&records));
    assert!(!ledger.rows.is_empty());
    let gross = PerfStats::gross(&ledger).unwrap();
    assert!(gross.long_short.sharpe.unwrap() > 0.0);
    let net0 = apply_costs(&ledger, CostScenario::Fixed { bps: 0.0 });
    for (a, b) in net0.long_short.iter().zip(ledger.ls_gross()) {
        assert!((a - b).abs() < 1e-15);
    }
    let s20 = perf_stats(&apply_costs(&ledger, CostScenario::Fixed { bps: 20.0 }).long_short).unwrap();
    assert!(s20.sharpe.unwrap() < gross.long_short.sharpe.unwrap());
}

#[test]
fn reruns_are_bit_identical() {
    let p = panel(5);
    let plan = ExperimentPlan::new(vec![5], 2000, 2002, 2002);
    let inputs = Inputs {
        panel: &p,
        auxiliary: &[],
        base: None,
        seed: 2,
    };
    let a = run_model(&plan, &ridge(), 5, &inputs).unwrap();
    let b = run_model(&plan, &ridge(), 5, &inputs).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn forecasts_never_precede_their_vintage(seed in 0u64..1000) {
        let p = panel(seed);
        let plan = ExperimentPlan::new(vec![5], 2000, 2002, 2002);
        let inputs = Inputs { panel: &p, auxiliary: &[], base: None, seed };
        let run = run_model(&plan, &ridge(), 5, &inputs).unwrap();
        for v in &run.vintages {
            for r in &v.records {
                prop_assert!(r.date > v.vintage.cutoff);
                prop_assert!(r.y_pred.is_finite());
            }
        }
    }
}
