//! Second-order gradient boosting of exact-split regression trees under
//! squared loss, with depth-wise and leaf-wise growth.

mod tree;

pub use tree::{best_split, grad_hess, grow_tree, Growth, Split, Tree, TreeNode, TreeParams};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorcore::Tensor;

pub const DEPTH_GRID: [usize; 5] = [3, 5, 7, 9, 11];
pub const DEPTH_LR_GRID: [f64; 5] = [0.005, 0.01, 0.05, 0.1, 0.2];
pub const LEAVES_GRID: [usize; 5] = [32, 64, 128, 256, 512];
pub const LEAVES_LR_GRID: [f64; 3] = [0.01, 0.05, 0.1];

/// Stop adding trees once the validation tail has not improved for
/// `patience` rounds; the ensemble keeps the best prefix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStopping {
    pub patience: usize,
    /// Fraction of rows, taken from the end, held out for validation.
    pub valid_frac: f64,
}

impl Default for EarlyStopping {
    fn default() -> Self {
        Self {
            patience: 20,
            valid_frac: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoostParams {
    pub rounds: usize,
    pub learning_rate: f64,
    pub tree: TreeParams,
    pub growth: Growth,
    pub early_stopping: Option<EarlyStopping>,
}

impl Default for BoostParams {
    fn default() -> Self {
        Self {
            rounds: 200,
            learning_rate: 0.1,
            tree: TreeParams::default(),
            growth: Growth::DepthWise { max_depth: 5 },
            early_stopping: Some(EarlyStopping::default()),
        }
    }
}

impl BoostParams {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("boosting needs at least one round".into()));
        }
        if !(0.0..=1.0).contains(&self.learning_rate) {
            return Err(Error::Config(format!("learning rate {} outside [0, 1]", self.learning_rate)));
        }
        if !(self.tree.reg_lambda >= 0.0 && self.tree.reg_alpha >= 0.0) {
            return Err(Error::Config("leaf penalties must be non-negative".into()));
        }
        if let Some(es) = self.early_stopping {
            if !(es.valid_frac > 0.0 && es.valid_frac < 1.0) || es.patience == 0 {
                return Err(Error::Config(format!("invalid early stopping {es:?}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoostedEnsemble {
    pub trees: Vec<Tree>,
    pub learning_rate: f64,
    pub base_score: f64,
    pub reg_lambda: f64,
    pub gamma: f64,
    pub growth: Growth,
    pub n_features: usize,
}

impl BoostedEnsemble {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::dim("feature vector", self.n_features, x.len()));
        }
        Ok(self.base_score + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>())
    }

    pub fn predict_rows(&self, x: &Tensor) -> Result<Vec<f64>> {
        (0..x.rows()).map(|i| self.predict(x.row(i))).collect()
    }
}

fn mse(y: &[f64], p: &[f64]) -> f64 {
    y.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len().max(1) as f64
}

/// Fits `params.rounds` trees from a mean base score.
pub fn boost(x: &Tensor, y: &[f64], params: &BoostParams) -> Result<BoostedEnsemble> {
    boost_traced(x, y, params).map(|(e, _)| e)
}

/// [`boost`] that also returns the training MSE after every round.
pub fn boost_traced(x: &Tensor, y: &[f64], params: &BoostParams) -> Result<(BoostedEnsemble, Vec<f64>)> {
    params.validate()?;
    if x.rows() != y.len() {
        return Err(Error::dim("targets", x.rows(), y.len()));
    }
    if y.is_empty() {
        return Err(Error::Validation("boosting needs at least one row".into()));
    }
    tree::check_features(x)?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("boosting targets must be finite".into()));
    }
    let n = y.len();
    let n_valid = match params.early_stopping {
        Some(es) if n >= 10 => ((n as f64 * es.valid_frac).round() as usize).clamp(1, n - 1),
        _ => 0,
    };
    let n_train = n - n_valid;
    let rows: Vec<usize> = (0..n_train).collect();
    let base_score = y[..n_train].iter().sum::<f64>() / n_train as f64;
    let eta = params.learning_rate;
    let mut pred = vec![base_score; n];
    let mut trees = Vec::new();
    let mut trace = Vec::new();
    let mut best = (f64::INFINITY, 0usize);
    for round in 0..params.rounds {
        let (g, h) = grad_hess(&y[..n_train], &pred[..n_train]);
        let t = grow_tree(x, &rows, &g, &h, &params.tree, params.growth);
        for (i, p) in pred.iter_mut().enumerate() {
            *p += eta * t.predict(x.row(i));
        }
        trees.push(t);
        trace.push(mse(&y[..n_train], &pred[..n_train]));
        if n_valid > 0 {
            let v = mse(&y[n_train..], &pred[n_train..]);
            if v < best.0 {
                best = (v, round + 1);
            } else if round + 1 - best.1 >= params.early_stopping.map_or(usize::MAX, |e| e.patience) {
                break;
            }
        }
    }
    if n_valid > 0 {
        trees.truncate(best.1);
        trace.truncate(best.1);
    }
    Ok((
        BoostedEnsemble {
            trees,
            learning_rate: eta,
            base_score,
            reg_lambda: params.tree.reg_lambda,
            gamma: params.tree.gamma,
            growth: params.growth,
            n_features: x.cols(),
        },
        trace,
    ))
}
