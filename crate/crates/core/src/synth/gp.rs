use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::kernel::KernelSpec;
use crate::error::{Error, Result};

/// Largest grid for which a dense covariance is factorized.
pub const MAX_DENSE_GRID: usize = 4096;

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSeries {
    pub values: Vec<f64>,
    pub seed: u64,
    pub spec: KernelSpec,
}

/// Covariance matrix of `spec` on the grid `0..n`.
pub fn covariance(spec: &KernelSpec, n: usize) -> DMatrix<f64> {
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = spec.eval(i as f64, j as f64);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Factorizes `k + jitter·I`, escalating the jitter tenfold from
/// `1e-10·trace/n` up to `1e-4·trace/n`. Returns the lower factor and the
/// jitter that succeeded.
pub fn jittered_cholesky(k: &DMatrix<f64>) -> Option<(DMatrix<f64>, f64)> {
    let n = k.nrows();
    let scale = k.trace() / n.max(1) as f64;
    if scale == 0.0 && k.iter().all(|&v| v == 0.0) {
        return Some((DMatrix::zeros(n, n), 0.0));
    }
    if !(scale > 0.0) {
        return None;
    }
    let mut jitter = JITTER_START * scale;
    while jitter <= JITTER_MAX * scale * (1.0 + 1e-9) {
        let mut m = k.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(ch) = m.cholesky() {
            return Some((ch.l(), jitter));
        }
        jitter *= 10.0;
    }
    None
}

/// Draws one trajectory of a zero-mean GP with covariance `spec` on `0..n`.
pub fn gp_sample(spec: &KernelSpec, n: usize, seed: u64) -> Result<SyntheticSeries> {
    let fail = |reason: String| Error::Generation {
        spec: spec.to_string(),
        reason,
    };
    if n == 0 {
        return Err(fail("grid size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let values: Vec<f64> = if spec.is_diagonal() {
        let diag: Vec<f64> = (0..n).map(|i| spec.eval(i as f64, i as f64)).collect();
        let scale = diag.iter().sum::<f64>() / n as f64;
        if diag.iter().any(|&d| d < 0.0 || !d.is_finite()) {
            return Err(fail("negative variance on the diagonal".into()));
        }
        let jitter = JITTER_START * scale;
        diag.iter().zip(&z).map(|(d, z)| (d + jitter).sqrt() * z).collect()
    } else {
        if n > MAX_DENSE_GRID {
            return Err(fail(format!("grid {n} exceeds the dense limit {MAX_DENSE_GRID}")));
        }
        let k = covariance(spec, n);
        let (l, _) = jittered_cholesky(&k).ok_or_else(|| fail("covariance not positive definite after maximum jitter".into()))?;
        (l * DVector::from_vec(z)).iter().copied().collect()
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(fail("non-finite sample".into()));
    }
    Ok(SyntheticSeries {
        values,
        seed,
        spec: spec.clone(),
    })
}
