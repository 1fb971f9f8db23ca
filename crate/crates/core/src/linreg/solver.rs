//! Monotone accelerated proximal gradient for penalized Huber regression on
//! standardized features.

use serde::{Deserialize, Serialize};

pub fn huber_loss(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        0.5 * r * r
    } else {
        delta * (a - 0.5 * delta)
    }
}

/// Derivative of [`huber_loss`] with respect to the residual.
pub fn huber_grad(r: f64, delta: f64) -> f64 {
    r.clamp(-delta, delta)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Stop once the norm of the proximal gradient mapping falls below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 20_000,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FitTrace {
    /// Penalized objective after every iteration.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Row-major `n×p` standardized design.
pub(crate) struct Problem<'a> {
    pub x: &'a [f64],
    pub n: usize,
    pub p: usize,
    pub y: &'a [f64],
    pub delta: f64,
    pub l1: f64,
    pub l2: f64,
}

impl Problem<'_> {
    fn residuals(&self, w: &[f64], out: &mut [f64]) {
        let b = w[self.p];
        for i in 0..self.n {
            let row = &self.x[i * self.p..(i + 1) * self.p];
            let fit: f64 = row.iter().zip(&w[..self.p]).map(|(a, c)| a * c).sum();
            out[i] = self.y[i] - fit - b;
        }
    }

    /// Smooth part and its gradient (`p` slopes then the intercept).
    fn smooth(&self, w: &[f64], r: &mut [f64], grad: &mut [f64]) -> f64 {
        self.residuals(w, r);
        let inv = 1.0 / self.n as f64;
        grad.fill(0.0);
        let mut loss = 0.0;
        for i in 0..self.n {
            loss += huber_loss(r[i], self.delta);
            let psi = huber_grad(r[i], self.delta);
            let row = &self.x[i * self.p..(i + 1) * self.p];
            for (g, a) in grad[..self.p].iter_mut().zip(row) {
                *g -= psi * a;
            }
            grad[self.p] -= psi;
        }
        grad.iter_mut().for_each(|g| *g *= inv);
        let ridge: f64 = w[..self.p].iter().map(|c| c * c).sum();
        for (g, c) in grad[..self.p].iter_mut().zip(&w[..self.p]) {
            *g += 2.0 * self.l2 * c;
        }
        loss * inv + self.l2 * ridge
    }

    fn smooth_value(&self, w: &[f64], r: &mut [f64]) -> f64 {
        self.residuals(w, r);
        let loss: f64 = r.iter().map(|&v| huber_loss(v, self.delta)).sum();
        let ridge: f64 = w[..self.p].iter().map(|c| c * c).sum();
        loss / self.n as f64 + self.l2 * ridge
    }

    fn l1_term(&self, w: &[f64]) -> f64 {
        self.l1 * w[..self.p].iter().map(|c| c.abs()).sum::<f64>()
    }

    pub fn objective(&self, w: &[f64]) -> f64 {
        let mut r = vec![0.0; self.n];
        self.smooth_value(w, &mut r) + self.l1_term(w)
    }

    fn prox(&self, v: &mut [f64], step: f64) {
        let t = self.l1 * step;
        if t > 0.0 {
            for c in &mut v[..self.p] {
                *c = c.signum() * (c.abs() - t).max(0.0);
            }
        }
    }

    /// Minimizes from `w0`; returns the best iterate and its trace.
    pub fn solve(&self, w0: Vec<f64>, cfg: &SolverConfig) -> (Vec<f64>, FitTrace) {
        let dim = self.p + 1;
        let mut r = vec![0.0; self.n];
        let mut grad = vec![0.0; dim];
        let mut x = w0;
        let mut fx = self.objective(&x);
        let mut yv = x.clone();
        let mut t: f64 = 1.0;
        let mut lip = 1.0;
        let mut trace = FitTrace::default();
        let mut z = vec![0.0; dim];
        for it in 0..cfg.max_iter {
            let fy = self.smooth(&yv, &mut r, &mut grad);
            let mut fz;
            let mut fz_smooth;
            loop {
                for k in 0..dim {
                    z[k] = yv[k] - grad[k] / lip;
                }
                self.prox(&mut z, 1.0 / lip);
                fz_smooth = self.smooth_value(&z, &mut r);
                let mut lin = 0.0;
                let mut sq = 0.0;
                for k in 0..dim {
                    let d = z[k] - yv[k];
                    lin += grad[k] * d;
                    sq += d * d;
                }
                let bound = fy + lin + 0.5 * lip * sq;
                if fz_smooth <= bound + 1e-13 * (1.0 + bound.abs()) || lip > 1e16 {
                    fz = fz_smooth + self.l1_term(&z);
                    break;
                }
                lip *= 2.0;
            }
            let step_norm = lip * z.iter().zip(&yv).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let x_prev = x.clone();
            if fz <= fx {
                x.copy_from_slice(&z);
                fx = fz;
            } else {
                fz = fx;
            }
            for k in 0..dim {
                yv[k] = x[k] + (t / t_next) * (z[k] - x[k]) + ((t - 1.0) / t_next) * (x[k] - x_prev[k]);
            }
            t = t_next;
            trace.objective.push(fz);
            trace.iterations = it + 1;
            if step_norm < cfg.tol {
                trace.converged = true;
                break;
            }
        }
        if !trace.converged {
            log::warn!(
                "huber solver stopped after {} iterations without reaching tolerance {}",
                trace.iterations,
                cfg.tol
            );
        }
        (x, trace)
    }
}
