//! Central-difference checks of every tape operation.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::nn::{add_block, block_graph, AttentionConfig, ParamSet};
use super::tensor::{softmax_rows, Tensor};

const H: f64 = 1e-5;

fn rand_t(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::randn(&[rows, cols], 1.0, &mut rng)
}

/// Compares autodiff gradients of a scalar function of `inputs` against
/// central differences; returns the worst relative error.
pub(crate) fn check<F>(inputs: &[Tensor], f: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let eval = |ts: &[Tensor]| {
        let mut g = Graph::new();
        let vs: Vec<Var> = ts.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let out = f(&mut g, &vs);
        g.scalar(out)
    };
    let mut g = Graph::new();
    let vs: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = f(&mut g, &vs);
    let grads = g.backward(out);
    let mut worst: f64 = 0.0;
    for (i, t) in inputs.iter().enumerate() {
        let analytic = grads.get(vs[i]).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]);
        for j in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += H;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= H;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * H);
            let err = (numeric - analytic[j]).abs() / (1.0 + numeric.abs().max(analytic[j].abs()));
            worst = worst.max(err);
        }
    }
    worst
}

/// Reduces any matrix to a scalar with fixed, non-uniform weights.
fn weighted(g: &mut Graph, x: Var) -> Var {
    let t = g.value(x);
    let w: Vec<f64> = (0..t.len()).map(|i| 0.3 + 0.17 * (i % 7) as f64 - 0.05 * (i % 3) as f64).collect();
    let w = Tensor::matrix(t.rows(), t.cols(), w).unwrap();
    let wv = g.constant(w);
    let p = g.mul(x, wv);
    g.sum(p)
}

const TOL: f64 = 1e-6;

#[test]
fn matmul_and_transpose_products() {
    let e = check(&[rand_t(3, 4, 1), rand_t(4, 2, 2)], |g, v| {
        let y = g.matmul(v[0], v[1]);
        weighted(g, y)
    });
    assert!(e < TOL, "{e}");
    let e = check(&[rand_t(3, 4, 3), rand_t(5, 4, 4)], |g, v| {
        let y = g.matmul_bt(v[0], v[1]);
        weighted(g, y)
    });
    assert!(e < TOL, "{e}");
}

#[test]
fn elementwise_and_row_broadcasts() {
    let e = check(&[rand_t(3, 4, 5), rand_t(3, 4, 6), rand_t(1, 4, 7)], |g, v| {
        let a = g.add(v[0], v[1]);
        let m = g.mul(a, v[1]);
        let r = g.add_row(m, v[2]);
        let s = g.mul_row(r, v[2]);
        let s = g.scale(s, -1.7);
        weighted(g, s)
    });
    assert!(e < TOL, "{e}");
}

#[test]
fn relu_away_from_kink() {
    let mut t = rand_t(4, 4, 8);
    for v in t.data_mut() {
        if v.abs() < 1e-2 {
            *v = 0.5;
        }
    }
    let e = check(&[t], |g, v| {
        let y = g.relu(v[0]);
        weighted(g, y)
    });
    assert!(e < TOL, "{e}");
}

#[test]
fn masked_softmax() {
    let e = check(&[rand_t(4, 4, 9)], |g, v| {
        let m = g.causal_mask(v[0]);
        let s = g.softmax_rows(m);
        weighted(g, s)
    });
    assert!(e < TOL, "{e}");
}

#[test]
fn normalizations() {
    let e = check(&[rand_t(3, 5, 10)], |g, v| {
        let y = g.layer_norm(v[0]);
        weighted(g, y)
    });
    assert!(e < 1e-5, "{e}");
    let e = check(&[rand_t(6, 3, 11)], |g, v| {
        let (y, _, _) = g.batch_norm(v[0]);
        weighted(g, y)
    });
    assert!(e < 1e-5, "{e}");
}

#[test]
fn gathers_slices_and_concat() {
    let e = check(&[rand_t(5, 3, 12), rand_t(4, 2, 13)], |g, v| {
        let emb = g.embedding(v[0], &[4, 0, 4, 2]);
        let c = g.concat_cols(&[emb, v[1]]);
        let r = g.slice_rows(c, 1, 2);
        let s = g.slice_cols(r, 2, 3);
        weighted(g, s)
    });
    assert!(e < TOL, "{e}");
}

#[test]
fn losses() {
    let e = check(&[rand_t(3, 5, 14)], |g, v| g.cross_entropy(v[0], &[0, 4, 2]));
    assert!(e < TOL, "{e}");
    let e = check(&[rand_t(2, 3, 15)], |g, v| {
        g.mse(v[0], &[0.1, -0.2, 0.3, 1.0, 0.0, -1.0], Some(&[1.0, 0.0, 2.0, 1.0, 1.0, 0.5]))
    });
    assert!(e < TOL, "{e}");
    let mut t = rand_t(2, 3, 16);
    for v in t.data_mut() {
        if v.abs() < 1e-2 {
            *v = -0.4;
        }
    }
    let e = check(&[t], |g, v| g.abs_sum(v[0]));
    assert!(e < TOL, "{e}");
}

#[test]
fn two_layer_causal_transformer() {
    let cfg = AttentionConfig { n_heads: 2, model_dim: 4, head_dim: 3, causal: true };
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut ps = ParamSet::new();
    let b0 = add_block(&mut ps, "b0", &cfg, 6, &mut rng);
    let b1 = add_block(&mut ps, "b1", &cfg, 6, &mut rng);
    // Perturb every tensor so the zero-initialized projections carry gradient.
    let mut inputs: Vec<Tensor> = ps.entries().iter().map(|e| e.tensor.clone()).collect();
    for (i, t) in inputs.iter_mut().enumerate() {
        let noise = rand_t(t.rows(), t.cols(), 100 + i as u64);
        for (v, n) in t.data_mut().iter_mut().zip(noise.data()) {
            *v += 0.4 * n;
        }
    }
    inputs.push(rand_t(5, 4, 99));
    let e = check(&inputs, |g, v| {
        let x = *v.last().unwrap();
        let h = block_graph(g, x, v, &b0, &cfg);
        let h = block_graph(g, h, v, &b1, &cfg);
        weighted(g, h)
    });
    assert!(e < 1e-5, "{e}");
}

#[test]
fn untracked_inputs_receive_no_gradient() {
    let mut g = Graph::new();
    let a = g.leaf(rand_t(2, 2, 1), true);
    let b = g.constant(rand_t(2, 2, 2));
    let y = g.matmul(a, b);
    let s = g.sum(y);
    let grads = g.backward(s);
    assert!(grads.get(a).is_some());
    assert!(grads.get(b).is_none());
}

proptest! {
    #[test]
    fn softmax_is_shift_invariant(vals in prop::collection::vec(-20.0f64..20.0, 6), c in -50.0f64..50.0) {
        let a = Tensor::matrix(2, 3, vals.clone()).unwrap();
        let b = Tensor::matrix(2, 3, vals.iter().map(|v| v + c).collect()).unwrap();
        let sa = softmax_rows(&a).unwrap();
        let sb = softmax_rows(&b).unwrap();
        for (x, y) in sa.data().iter().zip(sb.data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        for r in 0..2 {
            prop_assert!((sa.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized(vals in prop::collection::vec(-5.0f64..5.0, 12)) {
        let spread = vals[..6].iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - vals[..6].iter().cloned().fold(f64::INFINITY, f64::min);
        let spread2 = vals[6..].iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - vals[6..].iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 0.5 && spread2 > 0.5);
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(2, 6, vals).unwrap());
        let y = g.layer_norm(x);
        for r in 0..2 {
            let row = g.value(y).row(r);
            let mu = row.iter().sum::<f64>() / 6.0;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / 6.0;
            prop_assert!(mu.abs() < 1e-9);
            prop_assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn causal_prefix_outputs_ignore_suffix(seed in 0u64..1000, t in 2usize..6, cut in 1usize..5) {
        prop_assume!(cut < t);
        let cfg = AttentionConfig { n_heads: 2, model_dim: 4, head_dim: 2, causal: true };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let idx = add_block(&mut ps, "b", &cfg, 5, &mut rng);
        for i in 0..ps.len() {
            let noise = rand_t(ps.tensor(i).rows(), ps.tensor(i).cols(), seed + i as u64);
            for (v, n) in ps.tensor_mut(i).data_mut().iter_mut().zip(noise.data()) {
                *v += 0.3 * n;
            }
        }
        let x = rand_t(t, 4, seed ^ 7);
        let mut x2 = x.clone();
        for v in &mut x2.data_mut()[cut * 4..] {
            *v += 3.0;
        }
        let a = super::nn::transformer_block(&x, &ps, &idx, &cfg).unwrap();
        let b = super::nn::transformer_block(&x2, &ps, &idx, &cfg).unwrap();
        for i in 0..cut * 4 {
            prop_assert!((a.data()[i] - b.data()[i]).abs() < 1e-12);
        }
    }
}
