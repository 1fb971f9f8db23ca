//! Huber-loss linear benchmarks (plain, ridge, lasso, elastic net) and
//! principal component regression on lagged-return features.

mod pcr;
mod solver;

pub use pcr::{fit_pcr, pcr_candidates, PcrModel};
pub use solver::{huber_grad, huber_loss, FitTrace, SolverConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorcore::Tensor;
use solver::Problem;

pub const HUBER_DELTA: f64 = 1.35;

/// Penalty added to the mean Huber loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Penalty {
    None,
    /// `λ‖θ‖₂²`
    L2 { lambda: f64 },
    /// `λ‖θ‖₁`
    L1 { lambda: f64 },
    /// `α·r‖θ‖₁ + α·(1−r)‖θ‖₂²`
    Elastic { alpha: f64, l1_ratio: f64 },
}

impl Penalty {
    /// `(λ₁, λ₂)` strengths.
    pub fn strengths(&self) -> (f64, f64) {
        match *self {
            Penalty::None => (0.0, 0.0),
            Penalty::L2 { lambda } => (0.0, lambda),
            Penalty::L1 { lambda } => (lambda, 0.0),
            Penalty::Elastic { alpha, l1_ratio } => (alpha * l1_ratio, alpha * (1.0 - l1_ratio)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.strengths();
        if !(a >= 0.0 && b >= 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::Config(format!("invalid penalty {self:?}")));
        }
        if let Penalty::Elastic { l1_ratio, .. } = self {
            if !(0.0..=1.0).contains(l1_ratio) {
                return Err(Error::Config(format!("l1_ratio {l1_ratio} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// The four Huber benchmarks and how their tuned `α` maps to a penalty.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearFamily {
    OlsH,
    LassoH,
    RidgeH,
    EnetH,
}

impl LinearFamily {
    pub const ALL: [LinearFamily; 4] = [Self::OlsH, Self::LassoH, Self::RidgeH, Self::EnetH];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::OlsH => "ols_h",
            Self::LassoH => "lasso_h",
            Self::RidgeH => "ridge_h",
            Self::EnetH => "enet_h",
        }
    }

    /// `OlsH` applies `α‖θ‖²` to the summed loss, so its mean-form strength
    /// is `α/n`; the others use `α` directly on the mean loss.
    pub fn penalty(self, alpha: f64, l1_ratio: f64, n: usize) -> Penalty {
        match self {
            Self::OlsH => Penalty::L2 {
                lambda: alpha / n.max(1) as f64,
            },
            Self::LassoH => Penalty::L1 { lambda: alpha },
            Self::RidgeH => Penalty::L2 { lambda: alpha },
            Self::EnetH => Penalty::Elastic { alpha, l1_ratio },
        }
    }
}

/// Eight `α` values, one per decade from `1e-6` to `1e1`.
pub fn alpha_grid() -> Vec<f64> {
    (-6..=1).map(|e| 10f64.powi(e)).collect()
}

pub const L1_RATIOS: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

/// Per-column z-scores with the population sd; constant columns keep sd 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Scaler {
    pub fn fit(x: &Tensor) -> Self {
        let (n, p) = (x.rows(), x.cols());
        let mut mean = vec![0.0; p];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n.max(1) as f64);
        let mut var = vec![0.0; p];
        for i in 0..n {
            for j in 0..p {
                let d = x.at(i, j) - mean[j];
                var[j] += d * d;
            }
        }
        let sd = var
            .iter()
            .map(|v| {
                let s = (v / n.max(1) as f64).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, sd }
    }

    pub fn transform_row(&self, row: &[f64], out: &mut [f64]) {
        for j in 0..row.len() {
            out[j] = (row[j] - self.mean[j]) / self.sd[j];
        }
    }

    /// Row-major standardized copy of `x`.
    pub fn transform(&self, x: &Tensor) -> Vec<f64> {
        let p = x.cols();
        let mut out = vec![0.0; x.len()];
        for i in 0..x.rows() {
            self.transform_row(x.row(i), &mut out[i * p..(i + 1) * p]);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    /// Coefficients in original units, oldest lag first.
    pub theta: Vec<f64>,
    pub intercept: f64,
    pub penalty: Penalty,
    pub delta: f64,
    pub scaler: Scaler,
    /// Coefficients on standardized features.
    pub theta_std: Vec<f64>,
    pub intercept_std: f64,
}

impl LinearModel {
    pub fn n_features(&self) -> usize {
        self.theta.len()
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.theta.len() {
            return Err(Error::dim("feature vector", self.theta.len(), x.len()));
        }
        Ok(self.intercept + x.iter().zip(&self.theta).map(|(a, b)| a * b).sum::<f64>())
    }

    /// Same forecast through the standardized coefficients.
    pub fn predict_standardized(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.theta.len() {
            return Err(Error::dim("feature vector", self.theta.len(), x.len()));
        }
        let mut z = vec![0.0; x.len()];
        self.scaler.transform_row(x, &mut z);
        Ok(self.intercept_std + z.iter().zip(&self.theta_std).map(|(a, b)| a * b).sum::<f64>())
    }

    pub fn predict_rows(&self, x: &Tensor) -> Result<Vec<f64>> {
        (0..x.rows()).map(|i| self.predict(x.row(i))).collect()
    }
}

fn check_data(x: &Tensor, y: &[f64]) -> Result<()> {
    if x.rows() != y.len() {
        return Err(Error::dim("targets", x.rows(), y.len()));
    }
    if y.len() < 2 {
        return Err(Error::Validation("regression needs at least two rows".into()));
    }
    if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("regression data must be finite".into()));
    }
    Ok(())
}

pub fn fit_huber_linear(x: &Tensor, y: &[f64], penalty: Penalty, delta: f64) -> Result<LinearModel> {
    fit_huber_linear_with(x, y, penalty, delta, &SolverConfig::default()).map(|(m, _)| m)
}

/// [`fit_huber_linear`] with explicit solver settings; also returns the trace.
pub fn fit_huber_linear_with(
    x: &Tensor,
    y: &[f64],
    penalty: Penalty,
    delta: f64,
    solver: &SolverConfig,
) -> Result<(LinearModel, FitTrace)> {
    check_data(x, y)?;
    penalty.validate()?;
    if !(delta > 0.0) {
        return Err(Error::Config(format!("Huber threshold {delta} must be positive")));
    }
    let scaler = Scaler::fit(x);
    let z = scaler.transform(x);
    let (l1, l2) = penalty.strengths();
    let p = x.cols();
    let prob = Problem {
        x: &z,
        n: x.rows(),
        p,
        y,
        delta,
        l1,
        l2,
    };
    let mut w0 = vec![0.0; p + 1];
    w0[p] = crate::stats::median(y).unwrap_or(0.0);
    let (w, trace) = prob.solve(w0, solver);
    let theta_std = w[..p].to_vec();
    let intercept_std = w[p];
    let theta: Vec<f64> = theta_std.iter().zip(&scaler.sd).map(|(c, s)| c / s).collect();
    let intercept = intercept_std - theta.iter().zip(&scaler.mean).map(|(c, m)| c * m).sum::<f64>();
    Ok((
        LinearModel {
            theta,
            intercept,
            penalty,
            delta,
            scaler,
            theta_std,
            intercept_std,
        },
        trace,
    ))
}

/// Smallest `λ₁` at which the lasso solution is exactly zero: the largest
/// absolute standardized-feature correlation with the Huber score at the
/// intercept-only optimum.
pub fn lasso_lambda_max(x: &Tensor, y: &[f64], delta: f64) -> Result<f64> {
    check_data(x, y)?;
    let n = y.len();
    let empty: Vec<f64> = Vec::new();
    let prob = Problem {
        x: &empty,
        n,
        p: 0,
        y,
        delta,
        l1: 0.0,
        l2: 0.0,
    };
    let cfg = SolverConfig {
        tol: 1e-14,
        max_iter: 100_000,
    };
    let (w, _) = prob.solve(vec![crate::stats::median(y).unwrap_or(0.0)], &cfg);
    let b = w[0];
    let scaler = Scaler::fit(x);
    let z = scaler.transform(x);
    let p = x.cols();
    let mut corr = vec![0.0; p];
    for i in 0..n {
        let psi = huber_grad(y[i] - b, delta);
        for j in 0..p {
            corr[j] += z[i * p + j] * psi;
        }
    }
    Ok(corr.iter().map(|c| c.abs() / n as f64).fold(0.0, f64::max))
}
