use serde::{Deserialize, Serialize};

use super::runner::{run_vintage, tune_first_year, Inputs, ModelSpec, Prepared};
use super::{build_vintages, ExperimentPlan};
use crate::error::{Error, Result};

/// Overwrite one panel return.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mutation {
    pub row: usize,
    pub asset: usize,
    pub value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditVerdict {
    /// Post-cutoff change left the vintage untouched.
    Pass,
    /// Post-cutoff change altered the fitted model or its early forecasts.
    Leak,
    /// Pre-cutoff change altered the fit, as it should.
    SensitivityExpected,
    /// Pre-cutoff change had no effect on the fit.
    Insensitive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub vintage: usize,
    pub post_cutoff: bool,
    pub checkpoint_identical: bool,
    pub forecasts_identical: bool,
    /// Forecasts compared on the first evaluation date.
    pub compared: usize,
    pub verdict: AuditVerdict,
}

/// Refits one vintage on a panel with a single return overwritten and
/// compares the fitted parameters and the first evaluation date's
/// forecasts with the unmodified run.
pub fn lookahead_audit(
    plan: &ExperimentPlan,
    spec: &ModelSpec,
    window: usize,
    inputs: &Inputs,
    vintage_index: usize,
    mutation: Mutation,
) -> Result<AuditReport> {
    let panel = inputs.panel;
    if mutation.row >= panel.n_dates() || mutation.asset >= panel.n_assets() || !mutation.value.is_finite() {
        return Err(Error::Validation(format!("mutation {mutation:?} outside the panel")));
    }
    let vintages = build_vintages(plan, panel)?;
    let v = vintages
        .get(vintage_index)
        .ok_or_else(|| Error::Plan(format!("no vintage {vintage_index}")))?;
    let cand = tune_first_year(plan, spec, window, inputs)?.candidate;

    let run = |inp: &Inputs| -> Result<_> {
        let prep = Prepared::new(plan, inp)?;
        run_vintage(plan, v, spec, &cand, window, inp, &prep, Some(1))
    };
    let before = run(inputs)?;
    let mutated = panel.with_cell(mutation.row, mutation.asset, mutation.value);
    let after = run(&Inputs {
        panel: &mutated,
        ..*inputs
    })?;

    let post_cutoff = mutation.row >= v.train_rows.end;
    let checkpoint_identical = before.checkpoint == after.checkpoint;
    let forecasts_identical = before.records.len() == after.records.len()
        && before
            .records
            .iter()
            .zip(&after.records)
            .all(|(a, b)| a.asset_id == b.asset_id && a.y_pred.to_bits() == b.y_pred.to_bits() && a.up_prob.map(f64::to_bits) == b.up_prob.map(f64::to_bits));
    let verdict = match (post_cutoff, checkpoint_identical && forecasts_identical) {
        (true, true) => AuditVerdict::Pass,
        (true, false) => AuditVerdict::Leak,
        (false, _) if !checkpoint_identical => AuditVerdict::SensitivityExpected,
        (false, _) => AuditVerdict::Insensitive,
    };
    Ok(AuditReport {
        vintage: vintage_index,
        post_cutoff,
        checkpoint_identical,
        forecasts_identical,
        compared: before.records.len(),
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalproto::tests::small_panel;
    use crate::evalproto::Candidate;
    use crate::linreg::LinearFamily;

    #[test]
    fn post_cutoff_edits_do_not_leak() {
        let panel = small_panel();
        let plan = ExperimentPlan::new(vec![5], 2000, 2001, 2002);
        let spec = ModelSpec::single(
            "lasso",
            Candidate::Linear {
                kind: LinearFamily::LassoH,
                alpha: 1e-4,
                l1_ratio: 1.0,
            },
        );
        let inputs = Inputs {
            panel: &panel,
            auxiliary: &[],
            base: None,
            seed: 1,
        };
        let v = &build_vintages(&plan, &panel).unwrap()[0];
        let late = Mutation {
            row: v.eval_rows.start + 3,
            asset: 2,
            value: 0.3,
        };
        let r = lookahead_audit(&plan, &spec, 5, &inputs, 0, late).unwrap();
        assert_eq!(r.verdict, AuditVerdict::Pass);
        assert_eq!(r.compared, panel.n_assets());

        let early = Mutation {
            row: v.train_rows.end - 10,
            ..late
        };
        let r = lookahead_audit(&plan, &spec, 5, &inputs, 0, early).unwrap();
        assert_eq!(r.verdict, AuditVerdict::SensitivityExpected);
        assert!(!r.post_cutoff);

        let bad = Mutation { row: 10_000, ..late };
        assert!(lookahead_audit(&plan, &spec, 5, &inputs, 0, bad).is_err());
    }
}
