use std::ops::Range;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{context_index, AssetHistory, TrainingData};
use super::models::{fit, Candidate, FitContext, Preset, Trained};
use super::{build_vintages, derive_seed, splitmix, DataScope, ExperimentPlan, ForecastRecord, Vintage};
use crate::error::{Error, Result};
use crate::panel::{cap_strata, ReturnPanel};
use crate::synth::{SeriesPool, SourceKind};
use crate::tensorcore::{ModelCheckpoint, Regime};

/// A named model family with its hyperparameter grid. An explicit `grid`
/// wins over `preset`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    #[serde(default)]
    pub grid: Vec<Candidate>,
    #[serde(default)]
    pub preset: Option<Preset>,
}

impl ModelSpec {
    pub fn single(name: &str, cand: Candidate) -> Self {
        Self {
            name: name.into(),
            grid: vec![cand],
            preset: None,
        }
    }

    pub fn grid_for(&self, window: usize) -> Result<Vec<Candidate>> {
        let grid = match (&self.grid, self.preset) {
            (g, _) if !g.is_empty() => g.clone(),
            (_, Some(p)) => p.grid(window),
            _ => return Err(Error::Config(format!("model {} has neither grid nor preset", self.name))),
        };
        let fam = grid[0].family();
        if grid.iter().any(|c| c.family() != fam) {
            return Err(Error::Config(format!("model {} mixes families in its grid", self.name)));
        }
        for c in &grid {
            c.validate()?;
        }
        Ok(grid)
    }

    /// Regime actually applied: benchmarks always train from scratch.
    pub fn effective_regime(&self, plan: &ExperimentPlan, window: usize) -> Result<Regime> {
        let fam = self.grid_for(window)?[0].family();
        Ok(if fam.is_foundation() { plan.regime } else { Regime::Scratch })
    }

    pub fn key(&self, plan: &ExperimentPlan, window: usize) -> Result<String> {
        Ok(format!(
            "{}/{}/{}",
            self.name,
            self.effective_regime(plan, window)?,
            plan.scope.as_str()
        ))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Inputs<'a> {
    pub panel: &'a ReturnPanel,
    /// Undated auxiliary return series used by the augmented scope.
    pub auxiliary: &'a [Vec<f64>],
    /// Pretrained weights for zero-shot and fine-tune runs.
    pub base: Option<&'a ModelCheckpoint>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub chosen: usize,
    pub candidate: Candidate,
    /// Validation MSE per grid point; `None` when the fit failed. Empty when
    /// the grid is a single point.
    pub val_mse: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VintageResult {
    pub vintage: Vintage,
    pub model_id: String,
    /// Fitted parameters; `None` for zero-shot, which leaves the base as is.
    pub checkpoint: Option<Vec<u8>>,
    pub checkpoint_ext: &'static str,
    pub records: Vec<ForecastRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelRun {
    pub model: String,
    pub window: usize,
    pub regime: Regime,
    pub tuning: TuneResult,
    pub vintages: Vec<VintageResult>,
}

impl ModelRun {
    pub fn records(&self) -> Vec<ForecastRecord> {
        self.vintages.iter().flat_map(|v| v.records.iter().cloned()).collect()
    }
}

/// Per-run data shared by every vintage.
pub(super) struct Prepared {
    pub histories: Vec<AssetHistory>,
    pub eval_assets: Vec<usize>,
    pub train_assets: Vec<usize>,
    pub extra: Vec<(SourceKind, Vec<f64>)>,
}

impl Prepared {
    pub fn new(plan: &ExperimentPlan, inputs: &Inputs) -> Result<Self> {
        let panel = inputs.panel;
        let eval_assets: Vec<usize> = (0..panel.n_assets())
            .filter(|&i| {
                plan.eval_country
                    .as_ref()
                    .is_none_or(|c| &panel.assets()[i].country == c)
            })
            .collect();
        if eval_assets.is_empty() {
            return Err(Error::Plan(format!("no assets for country {:?}", plan.eval_country)));
        }
        let train_assets = match plan.scope {
            DataScope::Local => eval_assets.clone(),
            _ => (0..panel.n_assets()).collect(),
        };
        let extra = match plan.scope {
            DataScope::Augmented => {
                if inputs.auxiliary.is_empty() {
                    return Err(Error::Plan("augmented scope needs auxiliary series".into()));
                }
                inputs
                    .auxiliary
                    .iter()
                    .map(|s| (SourceKind::Auxiliary, s.clone()))
                    .collect()
            }
            DataScope::SyntheticAugmented => {
                let s = &plan.synthetic;
                SeriesPool::new()
                    .add_synthetic(s.count, s.len, &s.bank, derive_seed(inputs.seed, "synthetic"))?
                    .into_iter()
                    .map(|g| (SourceKind::Synthetic, g.values))
                    .collect()
            }
            _ => Vec::new(),
        };
        Ok(Self {
            histories: context_index(panel),
            eval_assets,
            train_assets,
            extra,
        })
    }

    fn training(&self, rows: &Range<usize>) -> TrainingData {
        TrainingData::build(&self.histories, &self.train_assets, rows, &self.extra)
    }
}

fn record_seed(base: u64, t: usize, i: usize) -> u64 {
    splitmix(base ^ (((t as u64) << 32) | i as u64))
}

/// Fits every grid point on the first vintage's training span minus its
/// final `valid_frac` share and keeps the lowest validation MSE.
pub fn tune_first_year(plan: &ExperimentPlan, spec: &ModelSpec, window: usize, inputs: &Inputs) -> Result<TuneResult> {
    let prep = Prepared::new(plan, inputs)?;
    let vintages = build_vintages(plan, inputs.panel)?;
    tune_with(plan, spec, window, inputs, &prep, &vintages[0])
}

fn tune_with(
    plan: &ExperimentPlan,
    spec: &ModelSpec,
    window: usize,
    inputs: &Inputs,
    prep: &Prepared,
    first: &Vintage,
) -> Result<TuneResult> {
    let grid = spec.grid_for(window)?;
    if grid.len() == 1 {
        return Ok(TuneResult {
            chosen: 0,
            candidate: grid[0].clone(),
            val_mse: Vec::new(),
        });
    }
    let rows = &first.train_rows;
    let n_valid = ((rows.len() as f64 * plan.valid_frac).ceil() as usize).clamp(1, rows.len().saturating_sub(1).max(1));
    let split = rows.end - n_valid;
    let fit_rows = rows.start..split;
    let data = prep.training(&fit_rows);

    let panel = inputs.panel;
    let mut valid: Vec<(&[f64], f64)> = Vec::new();
    for t in split..rows.end {
        for &i in &prep.eval_assets {
            if t == 0 || !panel.is_valid(t - 1, i) {
                continue;
            }
            if let (Some(ctx), Some(y)) = (prep.histories[i].context_before(t, window), panel.get(t, i)) {
                valid.push((ctx, y));
            }
        }
    }
    if valid.is_empty() {
        return Err(Error::Validation(format!("no validation contexts of length {window}")));
    }
    let tag = format!("tune/{}/{window}", spec.key(plan, window)?);
    if valid.len() > plan.max_valid_pairs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(inputs.seed, &format!("{tag}/valid")));
        let mut keep = index::sample(&mut rng, valid.len(), plan.max_valid_pairs).into_vec();
        keep.sort_unstable();
        valid = keep.into_iter().map(|k| valid[k]).collect();
    }

    let regime = spec.effective_regime(plan, window)?;
    let seed = derive_seed(inputs.seed, &tag);
    let val_mse: Vec<Option<f64>> = grid
        .par_iter()
        .map(|cand| {
            let ctx = FitContext {
                window,
                regime,
                base: inputs.base,
                seed,
                max_pairs: plan.max_train_pairs,
            };
            let model = match fit(cand, &data, &ctx) {
                Ok(m) => m,
                Err(e) => {
                    log::warn!("{} candidate failed: {e}", spec.name);
                    return None;
                }
            };
            let mut sse = 0.0;
            for (k, (c, y)) in valid.iter().enumerate() {
                let (p, _, _) = model.predict(c, record_seed(seed, k, 0)).ok()?;
                sse += (y - p) * (y - p);
            }
            let mse = sse / valid.len() as f64;
            mse.is_finite().then_some(mse)
        })
        .collect();
    let mut chosen: Option<usize> = None;
    for (k, v) in val_mse.iter().enumerate() {
        if let Some(v) = v {
            if chosen.is_none_or(|c| *v < val_mse[c].unwrap()) {
                chosen = Some(k);
            }
        }
    }
    let chosen = chosen.ok_or_else(|| Error::Training {
        param: spec.name.clone(),
        reason: "every grid point failed".into(),
    })?;
    log::info!("{}: chose grid point {chosen} of {}", spec.name, grid.len());
    Ok(TuneResult {
        chosen,
        candidate: grid[chosen].clone(),
        val_mse,
    })
}

/// Fits one vintage and forecasts its evaluation year.
pub fn run_regime(
    plan: &ExperimentPlan,
    vintage: &Vintage,
    spec: &ModelSpec,
    cand: &Candidate,
    window: usize,
    inputs: &Inputs,
) -> Result<VintageResult> {
    let prep = Prepared::new(plan, inputs)?;
    run_vintage(plan, vintage, spec, cand, window, inputs, &prep, None)
}

#[allow(clippy::too_many_arguments)]
pub(super) fn run_vintage(
    plan: &ExperimentPlan,
    vintage: &Vintage,
    spec: &ModelSpec,
    cand: &Candidate,
    window: usize,
    inputs: &Inputs,
    prep: &Prepared,
    eval_limit: Option<usize>,
) -> Result<VintageResult> {
    let key = spec.key(plan, window)?;
    let model_id = format!("{key}/{window}/{}", vintage.cutoff_year);
    let regime = spec.effective_regime(plan, window)?;
    let vseed = derive_seed(inputs.seed, &model_id);
    let data = prep.training(&vintage.train_rows);
    let ctx = FitContext {
        window,
        regime,
        base: inputs.base,
        seed: vseed,
        max_pairs: plan.max_train_pairs,
    };
    let model: Trained = fit(cand, &data, &ctx)?;
    let checkpoint = (regime != Regime::ZeroShot).then(|| model.checkpoint_bytes(regime, Some(vintage.cutoff)));

    let panel = inputs.panel;
    let rows = match eval_limit {
        Some(n) => vintage.eval_rows.start..(vintage.eval_rows.start + n).min(vintage.eval_rows.end),
        None => vintage.eval_rows.clone(),
    };
    let per_row: Vec<Vec<ForecastRecord>> = rows
        .into_par_iter()
        .map(|t| -> Result<Vec<ForecastRecord>> {
            if t == 0 {
                return Ok(Vec::new());
            }
            let strata = cap_strata(panel, t - 1);
            let mut out = Vec::new();
            for &i in &prep.eval_assets {
                if !panel.is_valid(t - 1, i) {
                    continue;
                }
                let Some(c) = prep.histories[i].context_before(t, window) else {
                    continue;
                };
                let (y_pred, up_prob, n_samples) = model.predict(c, record_seed(vseed, t, i))?;
                out.push(ForecastRecord {
                    date: panel.dates()[t],
                    asset_id: panel.assets()[i].id.clone(),
                    window,
                    model_id: model_id.clone(),
                    regime,
                    y_pred,
                    up_prob,
                    n_samples,
                    y_true: panel.get(t, i),
                    stratum: strata[i],
                });
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(VintageResult {
        vintage: vintage.clone(),
        model_id,
        checkpoint,
        checkpoint_ext: model.checkpoint_extension(),
        records: per_row.into_iter().flatten().collect(),
    })
}

/// Tunes on the first vintage, then refits the chosen grid point every year.
pub fn run_model(plan: &ExperimentPlan, spec: &ModelSpec, window: usize, inputs: &Inputs) -> Result<ModelRun> {
    if !plan.window_sizes.contains(&window) {
        return Err(Error::Plan(format!("window {window} not in plan")));
    }
    let vintages = build_vintages(plan, inputs.panel)?;
    let prep = Prepared::new(plan, inputs)?;
    let tuning = tune_with(plan, spec, window, inputs, &prep, &vintages[0])?;
    let mut out = Vec::with_capacity(vintages.len());
    for v in &vintages {
        let r = run_vintage(plan, v, spec, &tuning.candidate, window, inputs, &prep, None)?;
        log::info!("{}: {} forecasts", r.model_id, r.records.len());
        out.push(r);
    }
    Ok(ModelRun {
        model: spec.key(plan, window)?,
        window,
        regime: spec.effective_regime(plan, window)?,
        tuning,
        vintages: out,
    })
}
