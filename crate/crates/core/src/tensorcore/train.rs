use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, OptimizerState};
use super::graph::{Graph, Var};
use super::nn::ParamSet;
use crate::error::{Error, Result};

/// Minibatch optimization budget.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 64,
            lr: 1e-3,
            seed: 0,
        }
    }
}

/// A model that can score a minibatch on a fresh graph.
pub trait Objective {
    type Example;

    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;

    /// Builds the scalar minibatch loss. `vars` are the bound parameters in
    /// [`ParamSet`] order.
    fn batch_loss(&self, g: &mut Graph, vars: &[Var], batch: &[Self::Example], rng: &mut ChaCha8Rng) -> Var;
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    /// Set when training stopped early on a non-finite loss or gradient; the
    /// parameters are then those of the last finite step.
    pub aborted: Option<String>,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }
}

/// Runs `schedule.steps` Adam steps on batches drawn by `sampler`.
pub fn train_loop<O, S>(model: &mut O, mut sampler: S, schedule: &TrainSchedule) -> Result<TrainReport>
where
    O: Objective,
    S: FnMut(&mut ChaCha8Rng) -> Option<O::Example>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut opt = OptimizerState::new(model.params(), AdamConfig::with_lr(schedule.lr));
    let mut report = TrainReport::default();
    for step in 0..schedule.steps {
        let mut batch = Vec::with_capacity(schedule.batch_size);
        for _ in 0..schedule.batch_size.max(1) {
            match sampler(&mut rng) {
                Some(ex) => batch.push(ex),
                None => {
                    return Err(Error::Training {
                        param: "stream".into(),
                        reason: "training stream yielded no examples".into(),
                    })
                }
            }
        }
        let mut g = Graph::new();
        let vars = model.params().bind(&mut g, true);
        let loss = model.batch_loss(&mut g, &vars, &batch, &mut rng);
        let value = g.scalar(loss);
        if !value.is_finite() {
            report.aborted = Some(format!("non-finite loss at step {step}"));
            break;
        }
        let mut grads = g.backward(loss);
        let per_param: Vec<Option<Vec<f64>>> = vars.iter().map(|&v| grads.take(v)).collect();
        let snapshot = model.params().clone();
        if let Err(e) = opt.step(model.params_mut(), &per_param) {
            *model.params_mut() = snapshot;
            report.aborted = Some(format!("step {step}: {e}"));
            break;
        }
        report.losses.push(value);
    }
    Ok(report)
}

/// Trailing moving average with window `w` (shorter at the start).
pub fn moving_average(xs: &[f64], w: usize) -> Vec<f64> {
    let w = w.max(1);
    let mut out = Vec::with_capacity(xs.len());
    let mut acc = 0.0;
    for i in 0..xs.len() {
        acc += xs[i];
        if i >= w {
            acc -= xs[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}
