use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{check_data, fit_huber_linear_with, LinearModel, Penalty, Scaler, SolverConfig, HUBER_DELTA};
use crate::error::{Error, Result};
use crate::tensorcore::Tensor;

/// Principal component counts searched for a given window size.
pub fn pcr_candidates(window: usize) -> Vec<usize> {
    match window {
        5 => vec![2, 3],
        21 => vec![2, 4, 6, 8, 10, 12],
        252 => vec![16, 32, 48, 64, 96, 126],
        512 => vec![32, 64, 96, 128, 192, 256],
        c => {
            let mut v: Vec<usize> = [c / 8, c / 4, c / 2].iter().map(|&k| k.max(1)).collect();
            v.dedup();
            v
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcrModel {
    pub scaler: Scaler,
    /// `C×k` row-major loadings; column `j` is the `j`-th principal axis.
    pub components: Vec<f64>,
    pub k: usize,
    /// Share of standardized variance captured by each kept component.
    pub explained_variance_ratio: Vec<f64>,
    pub regression: LinearModel,
}

impl PcrModel {
    pub fn n_features(&self) -> usize {
        self.scaler.mean.len()
    }

    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        let c = self.n_features();
        if x.len() != c {
            return Err(Error::dim("feature vector", c, x.len()));
        }
        let mut z = vec![0.0; c];
        self.scaler.transform_row(x, &mut z);
        Ok((0..self.k)
            .map(|j| (0..c).map(|i| z[i] * self.components[i * self.k + j]).sum())
            .collect())
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        self.regression.predict(&self.scores(x)?)
    }

    pub fn component(&self, j: usize) -> Vec<f64> {
        (0..self.n_features()).map(|i| self.components[i * self.k + j]).collect()
    }
}

pub fn fit_pcr(x: &Tensor, y: &[f64], k: usize) -> Result<PcrModel> {
    fit_pcr_with(x, y, k, &SolverConfig::default())
}

/// Eigen-decomposition of the standardized Gram matrix, then an
/// unpenalized Huber regression on the leading `k` scores.
pub fn fit_pcr_with(x: &Tensor, y: &[f64], k: usize, solver: &SolverConfig) -> Result<PcrModel> {
    check_data(x, y)?;
    let (n, c) = (x.rows(), x.cols());
    if k == 0 || k > c.min(n) {
        return Err(Error::Config(format!("component count {k} outside 1..={}", c.min(n))));
    }
    let scaler = Scaler::fit(x);
    let z = scaler.transform(x);
    let zm = DMatrix::from_row_slice(n, c, &z);
    let gram = zm.transpose() * &zm / n as f64;
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let top = eig.eigenvalues[order[0]].max(0.0);
    let rank = order.iter().filter(|&&i| eig.eigenvalues[i] > 1e-10 * top.max(1e-300)).count();
    let k_eff = if rank < k {
        log::warn!("design rank {rank} below requested {k} components; using {}", rank.max(1));
        rank.max(1)
    } else {
        k
    };
    let mut components = vec![0.0; c * k_eff];
    for (j, &col) in order.iter().take(k_eff).enumerate() {
        // Fix the sign so the largest-magnitude loading is positive.
        let v = eig.eigenvectors.column(col);
        let pivot = v.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
        let s = if pivot < 0.0 { -1.0 } else { 1.0 };
        for i in 0..c {
            components[i * k_eff + j] = s * v[i];
        }
    }
    let explained_variance_ratio = order
        .iter()
        .take(k_eff)
        .map(|&i| if total > 0.0 { eig.eigenvalues[i].max(0.0) / total } else { 0.0 })
        .collect();
    let mut scores = vec![0.0; n * k_eff];
    for r in 0..n {
        for j in 0..k_eff {
            scores[r * k_eff + j] = (0..c).map(|i| z[r * c + i] * components[i * k_eff + j]).sum();
        }
    }
    let st = Tensor::matrix(n, k_eff, scores)?;
    let (regression, _) = fit_huber_linear_with(&st, y, Penalty::None, HUBER_DELTA, solver)?;
    Ok(PcrModel {
        scaler,
        components,
        k: k_eff,
        explained_variance_ratio,
        regression,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linreg::fit_huber_linear_with;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn tight() -> SolverConfig {
        SolverConfig {
            tol: 1e-12,
            max_iter: 200_000,
        }
    }

    fn design(n: usize, c: usize, seed: u64) -> (Tensor, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::randn(&[n, c], 1.0, &mut rng);
        let y = (0..n)
            .map(|i| {
                let e: f64 = rng.sample(StandardNormal);
                0.3 * x.at(i, 0) + 0.2 * x.at(i, 2) + e
            })
            .collect();
        (x, y)
    }

    #[test]
    fn full_rank_equals_full_regression() {
        let (x, y) = design(300, 4, 1);
        let pcr = fit_pcr_with(&x, &y, 4, &tight()).unwrap();
        let (full, _) = fit_huber_linear_with(&x, &y, Penalty::None, HUBER_DELTA, &tight()).unwrap();
        for i in 0..20 {
            let a = pcr.predict(x.row(i)).unwrap();
            let b = full.predict(x.row(i)).unwrap();
            assert!((a - b).abs() < 1e-8, "{a} {b}");
        }
    }

    #[test]
    fn components_are_orthonormal() {
        let (x, y) = design(200, 6, 2);
        let m = fit_pcr(&x, &y, 4).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                let d: f64 = m.component(a).iter().zip(m.component(b)).map(|(p, q)| p * q).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn dominant_direction_is_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 500;
        let load = [1.0, 0.8, -0.6, 0.9, 0.7];
        let mut data = Vec::with_capacity(n * 5);
        for _ in 0..n {
            let f: f64 = rng.sample(StandardNormal);
            for l in load {
                let e: f64 = rng.sample(StandardNormal);
                data.push(l * f + 0.01 * e);
            }
        }
        let x = Tensor::matrix(n, 5, data).unwrap();
        let y: Vec<f64> = (0..n).map(|i| x.at(i, 0)).collect();
        let m = fit_pcr(&x, &y, 1).unwrap();
        assert!(m.explained_variance_ratio[0] > 0.99, "{:?}", m.explained_variance_ratio);
    }

    #[test]
    fn isotropic_noise_has_no_in_sample_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 10_000;
        let x = Tensor::randn(&[n, 8], 1.0, &mut rng);
        let y: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let m = fit_pcr(&x, &y, 1).unwrap();
        let mean = y.iter().sum::<f64>() / n as f64;
        let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
        let sse: f64 = (0..n).map(|i| (y[i] - m.predict(x.row(i)).unwrap()).powi(2)).sum();
        assert!(1.0 - sse / sst < 0.05);
    }

    #[test]
    fn rotation_invariant_at_full_rank() {
        let (x, y) = design(150, 3, 5);
        let (c, s) = (0.6f64, 0.8f64);
        let q = [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]];
        let mut rot = Vec::with_capacity(450);
        for i in 0..150 {
            for j in 0..3 {
                rot.push((0..3).map(|k| x.at(i, k) * q[k][j]).sum::<f64>());
            }
        }
        let xr = Tensor::matrix(150, 3, rot).unwrap();
        let a = fit_pcr_with(&x, &y, 3, &tight()).unwrap();
        let b = fit_pcr_with(&xr, &y, 3, &tight()).unwrap();
        for i in 0..10 {
            let pa = a.predict(x.row(i)).unwrap();
            let pb = b.predict(xr.row(i)).unwrap();
            assert!((pa - pb).abs() < 1e-8);
        }
    }

    #[test]
    fn rank_deficit_reduces_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let base = Tensor::randn(&[50, 2], 1.0, &mut rng);
        let data: Vec<f64> = (0..50)
            .flat_map(|i| [base.at(i, 0), base.at(i, 1), base.at(i, 0) + base.at(i, 1)])
            .collect();
        let x = Tensor::matrix(50, 3, data).unwrap();
        let y: Vec<f64> = (0..50).map(|i| base.at(i, 0)).collect();
        let m = fit_pcr(&x, &y, 3).unwrap();
        assert_eq!(m.k, 2);
        assert!(fit_pcr(&x, &y, 0).is_err());
        assert_eq!(pcr_candidates(512), vec![32, 64, 96, 128, 192, 256]);
    }
}
