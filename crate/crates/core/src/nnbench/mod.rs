//! One-hidden-layer feedforward benchmark: linear, batch norm, ReLU,
//! inverted dropout and a scalar head, trained with Adam on MSE plus an ℓ1
//! weight penalty.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linreg::Scaler;
use crate::tensorcore::graph::NORM_EPS;
use crate::tensorcore::nn::linear;
use crate::tensorcore::{AdamConfig, Graph, ModelCheckpoint, OptimizerState, ParamSet, Regime, Tensor, Var};

pub const FAMILY: &str = "fnn";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FnnSpec {
    pub input_dim: usize,
    pub hidden_units: usize,
    pub dropout_p: f64,
    pub l1_lambda: f64,
    pub epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub min_lr: f64,
    pub bn_momentum: f64,
    /// Chronological tail share used for validation.
    pub valid_frac: f64,
}

impl Default for FnnSpec {
    fn default() -> Self {
        Self {
            input_dim: 1,
            hidden_units: 8,
            dropout_p: 0.2,
            l1_lambda: 1e-4,
            epochs: 30,
            patience: 5,
            lr: 1e-3,
            batch_size: 256,
            plateau_factor: 0.5,
            plateau_patience: 2,
            min_lr: 1e-5,
            bn_momentum: 0.1,
            valid_frac: 0.1,
        }
    }
}

impl FnnSpec {
    /// 8 hidden units.
    pub fn small(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_units: 8,
            ..Self::default()
        }
    }

    /// 32 hidden units.
    pub fn large(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_units: 32,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_units == 0 || self.batch_size == 0 {
            return Err(Error::Config(format!("degenerate network {self:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout_p)));
        }
        if !(self.lr > 0.0 && self.l1_lambda >= 0.0 && self.valid_frac >= 0.0 && self.valid_frac < 1.0) {
            return Err(Error::Config("invalid optimizer settings".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FnnModel {
    spec: FnnSpec,
    params: ParamSet,
    w1: usize,
    b1: usize,
    bn_gain: usize,
    bn_bias: usize,
    w_out: usize,
    b_out: usize,
    run_mean: usize,
    run_var: usize,
    x_mean: usize,
    x_sd: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FnnHistory {
    pub train_loss: Vec<f64>,
    /// Validation MSE before training, then after every epoch.
    pub val_loss: Vec<f64>,
    pub lrs: Vec<f64>,
    /// Index into `val_loss` of the restored parameters.
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub aborted: Option<String>,
}

impl FnnModel {
    /// Hidden layer with `N(0, 1/C)` weights; the output layer starts at zero.
    pub fn new(spec: FnnSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, h) = (spec.input_dim, spec.hidden_units);
        let mut ps = ParamSet::new();
        let w1 = ps.add("w1", Tensor::randn(&[c, h], 1.0 / (c as f64).sqrt(), &mut rng));
        let b1 = ps.add("b1", Tensor::zeros(&[1, h]));
        let bn_gain = ps.add("bn.gain", Tensor::filled(&[1, h], 1.0));
        let bn_bias = ps.add("bn.bias", Tensor::zeros(&[1, h]));
        let w_out = ps.add("w_out", Tensor::zeros(&[h, 1]));
        let b_out = ps.add("b_out", Tensor::zeros(&[1, 1]));
        let run_mean = ps.add_buffer("bn.running_mean", Tensor::zeros(&[1, h]));
        let run_var = ps.add_buffer("bn.running_var", Tensor::filled(&[1, h], 1.0));
        let x_mean = ps.add_buffer("scaler.mean", Tensor::zeros(&[1, c]));
        let x_sd = ps.add_buffer("scaler.sd", Tensor::filled(&[1, c], 1.0));
        Ok(Self {
            spec,
            params: ps,
            w1,
            b1,
            bn_gain,
            bn_bias,
            w_out,
            b_out,
            run_mean,
            run_var,
            x_mean,
            x_sd,
        })
    }

    pub fn spec(&self) -> &FnnSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn w1_index(&self) -> usize {
        self.w1
    }

    pub fn w_out_index(&self) -> usize {
        self.w_out
    }

    pub fn b_out_index(&self) -> usize {
        self.b_out
    }

    fn standardize(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.spec.input_dim {
            return Err(Error::dim("feature width", self.spec.input_dim, x.cols()));
        }
        let m = self.params.tensor(self.x_mean).data();
        let s = self.params.tensor(self.x_sd).data();
        let c = x.cols();
        let data = x.data().iter().enumerate().map(|(k, v)| (v - m[k % c]) / s[k % c]).collect();
        Tensor::matrix(x.rows(), c, data)
    }

    /// Forward pass on standardized inputs. Returns the `n×1` output and, in
    /// training mode, the batch means and variances of the hidden layer.
    pub fn forward_graph<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        vars: &[Var],
        x: Var,
        mode: Mode,
        rng: &mut R,
    ) -> (Var, Option<(Vec<f64>, Vec<f64>)>) {
        let h = linear(g, x, vars[self.w1], vars[self.b1]);
        let (norm, stats) = match mode {
            Mode::Train => {
                let (n, m, v) = g.batch_norm(h);
                (n, Some((m, v)))
            }
            Mode::Eval => {
                let mu = self.params.tensor(self.run_mean).data();
                let var = self.params.tensor(self.run_var).data();
                let shift = g.constant(Tensor::row_vector(mu.iter().map(|m| -m).collect()));
                let inv = g.constant(Tensor::row_vector(var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect()));
                let c = g.add_row(h, shift);
                (g.mul_row(c, inv), None)
            }
        };
        let s = g.mul_row(norm, vars[self.bn_gain]);
        let a = g.add_row(s, vars[self.bn_bias]);
        let mut a = g.relu(a);
        let p = self.spec.dropout_p;
        if mode == Mode::Train && p > 0.0 {
            let (rows, cols) = (g.value(a).rows(), g.value(a).cols());
            let keep = 1.0 / (1.0 - p);
            let mask: Vec<f64> = (0..rows * cols)
                .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                .collect();
            let m = g.constant(Tensor::matrix(rows, cols, mask).expect("dropout mask shape"));
            a = g.mul(a, m);
        }
        (linear(g, a, vars[self.w_out], vars[self.b_out]), stats)
    }

    /// MSE plus `λ(Σ|W1| + Σ|w_out|)`.
    pub fn loss_graph(&self, g: &mut Graph, vars: &[Var], pred: Var, y: &[f64]) -> Var {
        let mse = g.mse(pred, y, None);
        if self.spec.l1_lambda == 0.0 {
            return mse;
        }
        let a = g.abs_sum(vars[self.w1]);
        let b = g.abs_sum(vars[self.w_out]);
        let l1 = g.add(a, b);
        let l1 = g.scale(l1, self.spec.l1_lambda);
        g.add(mse, l1)
    }

    /// Eval-mode forecasts for raw (unstandardized) rows.
    pub fn predict_rows(&self, x: &Tensor) -> Result<Vec<f64>> {
        let z = self.standardize(x)?;
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g, false);
        let xv = g.constant(z);
        let (y, _) = self.forward_graph(&mut g, &vars, xv, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0));
        Ok(g.value(y).data().to_vec())
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let t = Tensor::matrix(1, x.len(), x.to_vec())?;
        Ok(self.predict_rows(&t)?[0])
    }

    fn val_mse(&self, x: &Tensor, y: &[f64]) -> f64 {
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let (p, _) = self.forward_graph(&mut g, &vars, xv, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0));
        let l = g.mse(p, y, None);
        g.scalar(l)
    }

    fn update_running(&mut self, means: &[f64], vars: &[f64], n: usize) {
        let mom = self.spec.bn_momentum;
        let unbias = if n > 1 { n as f64 / (n - 1) as f64 } else { 1.0 };
        let rm = self.run_mean;
        for (r, m) in self.params.tensor_mut(rm).data_mut().iter_mut().zip(means) {
            *r = (1.0 - mom) * *r + mom * m;
        }
        let rv = self.run_var;
        for (r, v) in self.params.tensor_mut(rv).data_mut().iter_mut().zip(vars) {
            *r = (1.0 - mom) * *r + mom * v * unbias;
        }
    }

    /// Trains on rows in chronological order; the last `valid_frac` share
    /// is the validation set and the best-validation parameters are kept.
    pub fn train(&mut self, x: &Tensor, y: &[f64], seed: u64) -> Result<FnnHistory> {
        if x.rows() != y.len() {
            return Err(Error::dim("targets", x.rows(), y.len()));
        }
        if y.is_empty() {
            return Err(Error::Validation("network training needs at least one row".into()));
        }
        if x.cols() != self.spec.input_dim {
            return Err(Error::dim("feature width", self.spec.input_dim, x.cols()));
        }
        if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("network training data must be finite".into()));
        }
        let n = y.len();
        let n_val = if n >= 2 {
            ((n as f64 * self.spec.valid_frac).round() as usize).min(n - 1)
        } else {
            0
        };
        let n_tr = n - n_val;
        let c = x.cols();
        let train_x = Tensor::matrix(n_tr, c, x.data()[..n_tr * c].to_vec())?;
        let scaler = Scaler::fit(&train_x);
        let (xm, xs) = (self.x_mean, self.x_sd);
        self.params.tensor_mut(xm).data_mut().copy_from_slice(&scaler.mean);
        self.params.tensor_mut(xs).data_mut().copy_from_slice(&scaler.sd);
        let z = self.standardize(x)?;
        let (z_tr, y_tr) = (Tensor::matrix(n_tr, c, z.data()[..n_tr * c].to_vec())?, &y[..n_tr]);
        let (z_val, y_val) = if n_val > 0 {
            (Tensor::matrix(n_val, c, z.data()[n_tr * c..].to_vec())?, &y[n_tr..])
        } else {
            (z_tr.clone(), y_tr)
        };

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut opt = OptimizerState::new(&self.params, AdamConfig::with_lr(self.spec.lr));
        let mut hist = FnnHistory::default();
        let mut best = (self.val_mse(&z_val, y_val), self.params.clone(), 0usize);
        hist.val_loss.push(best.0);
        let mut sched_best = best.0;
        let (mut sched_bad, mut stop_bad) = (0usize, 0usize);
        let mut order: Vec<usize> = (0..n_tr).collect();
        'epochs: for epoch in 1..=self.spec.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for chunk in order.chunks(self.spec.batch_size) {
                let bx: Vec<f64> = chunk.iter().flat_map(|&r| z_tr.row(r).iter().copied()).collect();
                let by: Vec<f64> = chunk.iter().map(|&r| y_tr[r]).collect();
                let mut g = Graph::new();
                let vars = self.params.bind(&mut g, true);
                let xv = g.constant(Tensor::matrix(chunk.len(), c, bx)?);
                let (pred, stats) = self.forward_graph(&mut g, &vars, xv, Mode::Train, &mut rng);
                let loss = self.loss_graph(&mut g, &vars, pred, &by);
                let value = g.scalar(loss);
                if !value.is_finite() {
                    hist.aborted = Some(format!("non-finite loss in epoch {epoch}"));
                    break 'epochs;
                }
                let mut grads = g.backward(loss);
                let per: Vec<Option<Vec<f64>>> = vars.iter().map(|&v| grads.take(v)).collect();
                if let Err(e) = opt.step(&mut self.params, &per) {
                    hist.aborted = Some(format!("epoch {epoch}: {e}"));
                    break 'epochs;
                }
                if let Some((m, v)) = stats {
                    self.update_running(&m, &v, chunk.len());
                }
                total += value * chunk.len() as f64;
            }
            hist.train_loss.push(total / n_tr as f64);
            hist.epochs_run = epoch;
            let v = self.val_mse(&z_val, y_val);
            hist.val_loss.push(v);
            hist.lrs.push(opt.lr());
            if !v.is_finite() {
                hist.aborted = Some(format!("non-finite validation loss in epoch {epoch}"));
                break;
            }
            if v < best.0 {
                best = (v, self.params.clone(), epoch);
                stop_bad = 0;
            } else {
                stop_bad += 1;
            }
            if v < sched_best {
                sched_best = v;
                sched_bad = 0;
            } else {
                sched_bad += 1;
                if sched_bad > self.spec.plateau_patience {
                    let lr = (opt.lr() * self.spec.plateau_factor).max(self.spec.min_lr);
                    opt.set_lr(lr);
                    sched_bad = 0;
                }
            }
            if stop_bad >= self.spec.patience {
                break;
            }
        }
        self.params = best.1;
        hist.best_epoch = best.2;
        Ok(hist)
    }

    pub fn to_checkpoint(&self, regime: Regime, cutoff: Option<chrono::NaiveDate>) -> ModelCheckpoint {
        ModelCheckpoint::new(
            FAMILY,
            serde_json::to_value(self.spec).expect("spec serializes"),
            regime,
            cutoff,
            self.params.clone(),
        )
    }

    pub fn from_checkpoint(ck: &ModelCheckpoint) -> Result<Self> {
        if ck.descriptor.family != FAMILY {
            return Err(Error::Format(format!("expected a {FAMILY} checkpoint, got {}", ck.descriptor.family)));
        }
        let spec: FnnSpec = serde_json::from_value(ck.descriptor.architecture.clone())?;
        let mut m = Self::new(spec, 0)?;
        m.params.copy_from(&ck.params)?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorcore::fdcheck;

    fn noisy_params(m: &mut FnnModel, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..m.params.len() {
            if !m.params.entry(i).trainable {
                continue;
            }
            let shape = m.params.tensor(i).shape().to_vec();
            let noise = Tensor::randn(&shape, 0.5, &mut rng);
            for (v, n) in m.params.tensor_mut(i).data_mut().iter_mut().zip(noise.data()) {
                *v += n;
            }
        }
        let rv = m.run_var;
        m.params.tensor_mut(rv).data_mut().iter_mut().enumerate().for_each(|(k, v)| *v = 0.5 + 0.1 * k as f64);
    }

    fn linear_data(n: usize, c: usize, seed: u64) -> (Tensor, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::randn(&[n, c], 1.0, &mut rng);
        let y = (0..n).map(|i| 0.8 * x.at(i, 0) - 0.5 * x.at(i, 1) + 0.3 * x.at(i, c - 1)).collect();
        (x, y)
    }

    #[test]
    fn zero_weights_give_output_bias() {
        let mut m = FnnModel::new(FnnSpec::small(4), 0).unwrap();
        let w1 = m.w1;
        m.params.tensor_mut(w1).data_mut().fill(0.0);
        let b = m.b_out;
        m.params.tensor_mut(b).data_mut()[0] = 0.7;
        assert_eq!(m.predict(&[1.0, 2.0, 3.0, 4.0]).unwrap(), 0.7);
        assert!(m.predict(&[1.0]).is_err());
    }

    #[test]
    fn eval_mode_is_deterministic_and_dropout_free() {
        let mut m = FnnModel::new(FnnSpec::large(3), 1).unwrap();
        noisy_params(&mut m, 2);
        let x = Tensor::randn(&[5, 3], 1.0, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(m.predict_rows(&x).unwrap(), m.predict_rows(&x).unwrap());
        let mut no_drop = m.clone();
        no_drop.spec.dropout_p = 0.0;
        assert_eq!(m.predict_rows(&x).unwrap(), no_drop.predict_rows(&x).unwrap());
    }

    #[test]
    fn eval_gradients_match_finite_differences() {
        let mut m = FnnModel::new(FnnSpec::small(3), 4).unwrap();
        noisy_params(&mut m, 5);
        let x = Tensor::randn(&[6, 3], 1.0, &mut ChaCha8Rng::seed_from_u64(6));
        let y = [0.1, -0.2, 0.3, 0.0, 0.5, -0.4];
        let inputs: Vec<Tensor> = (0..m.params.len()).map(|i| m.params.tensor(i).clone()).collect();
        let e = fdcheck::check(&inputs, |g, vars| {
            let xv = g.constant(x.clone());
            let (p, _) = m.forward_graph(g, vars, xv, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0));
            m.loss_graph(g, vars, p, &y)
        });
        assert!(e < 1e-4, "{e}");
    }

    #[test]
    fn l1_term_is_exact() {
        let mut m = FnnModel::new(FnnSpec::small(3), 7).unwrap();
        noisy_params(&mut m, 8);
        let x = Tensor::randn(&[4, 3], 1.0, &mut ChaCha8Rng::seed_from_u64(9));
        let y = [0.1, 0.2, 0.3, 0.4];
        let mut g = Graph::new();
        let vars = m.params.bind(&mut g, false);
        let xv = g.constant(x);
        let (p, _) = m.forward_graph(&mut g, &vars, xv, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0));
        let mse = g.mse(p, &y, None);
        let total = m.loss_graph(&mut g, &vars, p, &y);
        let hand: f64 = m.params.tensor(m.w1).data().iter().map(|v| v.abs()).sum::<f64>()
            + m.params.tensor(m.w_out).data().iter().map(|v| v.abs()).sum::<f64>();
        assert!((g.scalar(total) - g.scalar(mse) - 1e-4 * hand).abs() < 1e-15);
    }

    #[test]
    fn zero_target_is_matched_by_zero_predictor() {
        let (x, _) = linear_data(300, 4, 10);
        let y = vec![0.0; 300];
        let mut m = FnnModel::new(FnnSpec::small(4), 11).unwrap();
        let h = m.train(&x, &y, 12).unwrap();
        assert!(h.val_loss[h.best_epoch] <= 1e-6);
        let p = m.predict_rows(&x).unwrap();
        assert!(p[270..].iter().map(|v| v * v).sum::<f64>() / 30.0 <= 1e-6);
    }

    #[test]
    fn zero_epochs_keep_initialization() {
        let (x, y) = linear_data(50, 3, 13);
        let spec = FnnSpec {
            epochs: 0,
            ..FnnSpec::large(3)
        };
        let init = FnnModel::new(spec, 14).unwrap();
        let mut m = init.clone();
        m.train(&x, &y, 15).unwrap();
        for i in 0..init.params.len() {
            if init.params.entry(i).trainable {
                assert_eq!(m.params.tensor(i), init.params.tensor(i));
            }
        }
    }

    #[test]
    fn learns_a_noiseless_linear_target() {
        let (x, y) = linear_data(4000, 5, 16);
        let mut m = FnnModel::new(FnnSpec::large(5), 17).unwrap();
        let h = m.train(&x, &y, 18).unwrap();
        assert!(h.aborted.is_none());
        assert!(h.epochs_run <= 30);
        let val = &y[3600..];
        let mean = val.iter().sum::<f64>() / val.len() as f64;
        let var = val.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / val.len() as f64;
        assert!(h.val_loss[h.best_epoch] < 0.1 * var, "{} vs {var}", h.val_loss[h.best_epoch]);
        assert!(h.val_loss[h.best_epoch] <= *h.val_loss.last().unwrap());
        let again = {
            let mut m2 = FnnModel::new(FnnSpec::large(5), 17).unwrap();
            m2.train(&x, &y, 18).unwrap();
            m2
        };
        assert_eq!(again, m);
        let ck = m.to_checkpoint(Regime::Scratch, None);
        let back = FnnModel::from_checkpoint(&ModelCheckpoint::from_bytes(&ck.to_bytes()).unwrap()).unwrap();
        assert_eq!(back.predict_rows(&x).unwrap(), m.predict_rows(&x).unwrap());
    }
}
