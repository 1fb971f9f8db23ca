//! Parameter store and the Transformer building blocks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Standard deviation for projection weights at initialization.
pub const INIT_SD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    /// Buffers such as batch-norm running statistics are stored but never optimized.
    pub trainable: bool,
}

/// Ordered, named collection of model tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        self.push(name, tensor, true)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        self.push(name, tensor, false)
    }

    fn push(&mut self, name: impl Into<String>, tensor: Tensor, trainable: bool) -> usize {
        let name = name.into();
        debug_assert!(self.index_of(&name).is_none(), "duplicate parameter {name}");
        self.entries.push(ParamEntry {
            name,
            tensor,
            trainable,
        });
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entry(&self, i: usize) -> &ParamEntry {
        &self.entries[i]
    }

    pub fn tensor(&self, i: usize) -> &Tensor {
        &self.entries[i].tensor
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.entries[i].tensor
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.entries[i].tensor)
    }

    /// Number of scalar trainable parameters.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.tensor.len())
            .sum()
    }

    /// Places every tensor on the graph; trainable entries are tracked when `track` is set.
    pub fn bind(&self, g: &mut Graph, track: bool) -> Vec<Var> {
        self.entries
            .iter()
            .map(|e| g.leaf(e.tensor.clone(), track && e.trainable))
            .collect()
    }

    /// Overwrites tensors from another set with identical names and shapes.
    pub fn copy_from(&mut self, other: &ParamSet) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::dim("parameter count", self.len(), other.len()));
        }
        for (dst, src) in self.entries.iter_mut().zip(&other.entries) {
            if dst.name != src.name || dst.tensor.shape() != src.tensor.shape() {
                return Err(Error::dim(
                    dst.name.clone(),
                    format!("{:?}", dst.tensor.shape()),
                    format!("{} {:?}", src.name, src.tensor.shape()),
                ));
            }
            dst.tensor = src.tensor.clone();
        }
        Ok(())
    }
}

/// Multi-head attention dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub n_heads: usize,
    pub model_dim: usize,
    pub head_dim: usize,
    pub causal: bool,
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.head_dim == 0 || self.model_dim == 0 {
            return Err(Error::Config(format!("degenerate attention config {self:?}")));
        }
        Ok(())
    }

    pub fn concat_width(&self) -> usize {
        self.n_heads * self.head_dim
    }
}

/// Stand-alone attention weights, one `d×d_k` triple per head.
#[derive(Clone, Debug, PartialEq)]
pub struct MhsaParams {
    pub wq: Vec<Tensor>,
    pub wk: Vec<Tensor>,
    pub wv: Vec<Tensor>,
    /// `(h·d_k) × d_out`
    pub wo: Tensor,
}

/// Attention weights already placed on a graph.
#[derive(Clone, Debug)]
pub struct MhsaVars {
    pub wq: Vec<Var>,
    pub wk: Vec<Var>,
    pub wv: Vec<Var>,
    pub wo: Var,
}

/// Multi-head self-attention on the graph. Shapes are trusted; use [`mhsa`]
/// for checked evaluation.
pub fn mhsa_graph(g: &mut Graph, x: Var, p: &MhsaVars, cfg: &AttentionConfig) -> Var {
    let scale = 1.0 / (cfg.head_dim as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let q = g.matmul(x, p.wq[h]);
        let k = g.matmul(x, p.wk[h]);
        let v = g.matmul(x, p.wv[h]);
        let scores = g.matmul_bt(q, k);
        let mut scores = g.scale(scores, scale);
        if cfg.causal {
            scores = g.causal_mask(scores);
        }
        let attn = g.softmax_rows(scores);
        heads.push(g.matmul(attn, v));
    }
    let cat = if heads.len() == 1 {
        heads[0]
    } else {
        g.concat_cols(&heads)
    };
    g.matmul(cat, p.wo)
}

fn check_shape(name: &str, t: &Tensor, rows: usize, cols: usize) -> Result<()> {
    if t.shape() != [rows, cols] {
        return Err(Error::dim(name, format!("[{rows}, {cols}]"), format!("{:?}", t.shape())));
    }
    Ok(())
}

/// Checked multi-head self-attention on a `T×d` input.
pub fn mhsa(x: &Tensor, params: &MhsaParams, cfg: &AttentionConfig) -> Result<Tensor> {
    cfg.validate()?;
    if x.shape().len() != 2 || x.cols() != cfg.model_dim {
        return Err(Error::dim("X", format!("[T, {}]", cfg.model_dim), format!("{:?}", x.shape())));
    }
    for (name, set) in [("W_Q", &params.wq), ("W_K", &params.wk), ("W_V", &params.wv)] {
        if set.len() != cfg.n_heads {
            return Err(Error::dim(format!("{name} head count"), cfg.n_heads, set.len()));
        }
        for (i, w) in set.iter().enumerate() {
            check_shape(&format!("{name}[{i}]"), w, cfg.model_dim, cfg.head_dim)?;
        }
    }
    if params.wo.shape().len() != 2 || params.wo.rows() != cfg.concat_width() {
        return Err(Error::dim(
            "W_O",
            format!("[{}, d_out]", cfg.concat_width()),
            format!("{:?}", params.wo.shape()),
        ));
    }
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let leaf = |g: &mut Graph, ts: &[Tensor]| ts.iter().map(|t| g.constant(t.clone())).collect::<Vec<_>>();
    let vars = MhsaVars {
        wq: leaf(&mut g, &params.wq),
        wk: leaf(&mut g, &params.wk),
        wv: leaf(&mut g, &params.wv),
        wo: g.constant(params.wo.clone()),
    };
    let out = mhsa_graph(&mut g, xv, &vars, cfg);
    Ok(g.value(out).clone())
}

/// Indices of a pre-norm Transformer block's tensors inside a [`ParamSet`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockIdx {
    pub ln1_gain: usize,
    pub ln1_bias: usize,
    pub wq: Vec<usize>,
    pub wk: Vec<usize>,
    pub wv: Vec<usize>,
    pub wo: usize,
    pub ln2_gain: usize,
    pub ln2_bias: usize,
    pub ff1_w: usize,
    pub ff1_b: usize,
    pub ff2_w: usize,
    pub ff2_b: usize,
}

/// Registers one block. Residual-branch output projections start at zero so a
/// fresh block is the identity map.
pub fn add_block<R: Rng + ?Sized>(
    ps: &mut ParamSet,
    prefix: &str,
    cfg: &AttentionConfig,
    ff_dim: usize,
    rng: &mut R,
) -> BlockIdx {
    let d = cfg.model_dim;
    let dk = cfg.head_dim;
    let heads = |kind: &str, ps: &mut ParamSet, rng: &mut R| {
        (0..cfg.n_heads)
            .map(|h| ps.add(format!("{prefix}.attn.{kind}{h}"), Tensor::randn(&[d, dk], INIT_SD, rng)))
            .collect::<Vec<_>>()
    };
    let ln1_gain = ps.add(format!("{prefix}.ln1.gain"), Tensor::filled(&[1, d], 1.0));
    let ln1_bias = ps.add(format!("{prefix}.ln1.bias"), Tensor::zeros(&[1, d]));
    let wq = heads("q", ps, rng);
    let wk = heads("k", ps, rng);
    let wv = heads("v", ps, rng);
    let wo = ps.add(format!("{prefix}.attn.o"), Tensor::zeros(&[cfg.concat_width(), d]));
    let ln2_gain = ps.add(format!("{prefix}.ln2.gain"), Tensor::filled(&[1, d], 1.0));
    let ln2_bias = ps.add(format!("{prefix}.ln2.bias"), Tensor::zeros(&[1, d]));
    let ff1_w = ps.add(format!("{prefix}.ff1.w"), Tensor::randn(&[d, ff_dim], INIT_SD, rng));
    let ff1_b = ps.add(format!("{prefix}.ff1.b"), Tensor::zeros(&[1, ff_dim]));
    let ff2_w = ps.add(format!("{prefix}.ff2.w"), Tensor::zeros(&[ff_dim, d]));
    let ff2_b = ps.add(format!("{prefix}.ff2.b"), Tensor::zeros(&[1, d]));
    BlockIdx {
        ln1_gain,
        ln1_bias,
        wq,
        wk,
        wv,
        wo,
        ln2_gain,
        ln2_bias,
        ff1_w,
        ff1_b,
        ff2_w,
        ff2_b,
    }
}

/// Affine layer norm on the graph.
pub fn layer_norm_affine(g: &mut Graph, x: Var, gain: Var, bias: Var) -> Var {
    let n = g.layer_norm(x);
    let s = g.mul_row(n, gain);
    g.add_row(s, bias)
}

/// `x W + b`
pub fn linear(g: &mut Graph, x: Var, w: Var, b: Var) -> Var {
    let y = g.matmul(x, w);
    g.add_row(y, b)
}

/// Pre-norm block: `h = x + MHSA(LN(x))`, then `h + FFN(LN(h))` with a ReLU FFN.
pub fn block_graph(g: &mut Graph, x: Var, vars: &[Var], idx: &BlockIdx, cfg: &AttentionConfig) -> Var {
    let v = |i: usize| vars[i];
    let a_in = layer_norm_affine(g, x, v(idx.ln1_gain), v(idx.ln1_bias));
    let attn = MhsaVars {
        wq: idx.wq.iter().map(|&i| v(i)).collect(),
        wk: idx.wk.iter().map(|&i| v(i)).collect(),
        wv: idx.wv.iter().map(|&i| v(i)).collect(),
        wo: v(idx.wo),
    };
    let a_out = mhsa_graph(g, a_in, &attn, cfg);
    let h = g.add(x, a_out);
    let f_in = layer_norm_affine(g, h, v(idx.ln2_gain), v(idx.ln2_bias));
    let f1 = linear(g, f_in, v(idx.ff1_w), v(idx.ff1_b));
    let f1 = g.relu(f1);
    let f2 = linear(g, f1, v(idx.ff2_w), v(idx.ff2_b));
    g.add(h, f2)
}

/// Checked evaluation of a single block on `x` (T×d).
pub fn transformer_block(x: &Tensor, params: &ParamSet, idx: &BlockIdx, cfg: &AttentionConfig) -> Result<Tensor> {
    cfg.validate()?;
    if x.shape().len() != 2 || x.cols() != cfg.model_dim {
        return Err(Error::dim("X", format!("[T, {}]", cfg.model_dim), format!("{:?}", x.shape())));
    }
    let mut g = Graph::new();
    let vars = params.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let out = block_graph(&mut g, xv, &vars, idx, cfg);
    Ok(g.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(h: usize, d: usize, dk: usize, causal: bool) -> AttentionConfig {
        AttentionConfig {
            n_heads: h,
            model_dim: d,
            head_dim: dk,
            causal,
        }
    }

    #[test]
    fn hand_evaluated_single_head() {
        let c = cfg(1, 1, 1, false);
        let one = Tensor::matrix(1, 1, vec![1.0]).unwrap();
        let p = MhsaParams {
            wq: vec![one.clone()],
            wk: vec![one.clone()],
            wv: vec![one.clone()],
            wo: Tensor::matrix(1, 1, vec![2.5]).unwrap(),
        };
        let x = Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap();
        let out = mhsa(&x, &p, &c).unwrap();
        assert_eq!(out.data(), &[2.5, 2.5]);
    }

    #[test]
    fn single_position_is_value_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = cfg(2, 3, 2, true);
        let p = MhsaParams {
            wq: (0..2).map(|_| Tensor::randn(&[3, 2], 1.0, &mut rng)).collect(),
            wk: (0..2).map(|_| Tensor::randn(&[3, 2], 1.0, &mut rng)).collect(),
            wv: (0..2).map(|_| Tensor::randn(&[3, 2], 1.0, &mut rng)).collect(),
            wo: Tensor::randn(&[4, 3], 1.0, &mut rng),
        };
        let x = Tensor::randn(&[1, 3], 1.0, &mut rng);
        let out = mhsa(&x, &p, &c).unwrap();
        // concat(x W_V^h) W_O computed by hand
        let mut cat = Vec::new();
        for h in 0..2 {
            for j in 0..2 {
                cat.push((0..3).map(|i| x.data()[i] * p.wv[h].at(i, j)).sum::<f64>());
            }
        }
        for j in 0..3 {
            let e: f64 = (0..4).map(|i| cat[i] * p.wo.at(i, j)).sum();
            assert!((out.data()[j] - e).abs() < 1e-12);
        }
    }

    #[test]
    fn causal_row_ignores_future() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = cfg(1, 2, 2, true);
        let p = MhsaParams {
            wq: vec![Tensor::randn(&[2, 2], 1.0, &mut rng)],
            wk: vec![Tensor::randn(&[2, 2], 1.0, &mut rng)],
            wv: vec![Tensor::randn(&[2, 2], 1.0, &mut rng)],
            wo: Tensor::randn(&[2, 2], 1.0, &mut rng),
        };
        let x1 = Tensor::matrix(2, 2, vec![0.3, -0.2, 0.5, 0.9]).unwrap();
        let x2 = Tensor::matrix(2, 2, vec![0.3, -0.2, -7.0, 4.0]).unwrap();
        let a = mhsa(&x1, &p, &c).unwrap();
        let b = mhsa(&x2, &p, &c).unwrap();
        assert!((a.row(0)[0] - b.row(0)[0]).abs() <= 1e-12);
        assert!((a.row(0)[1] - b.row(0)[1]).abs() <= 1e-12);
    }

    #[test]
    fn shape_errors_name_the_matrix() {
        let c = cfg(1, 2, 2, false);
        let p = MhsaParams {
            wq: vec![Tensor::zeros(&[2, 2])],
            wk: vec![Tensor::zeros(&[3, 2])],
            wv: vec![Tensor::zeros(&[2, 2])],
            wo: Tensor::zeros(&[2, 2]),
        };
        let err = mhsa(&Tensor::zeros(&[4, 2]), &p, &c).unwrap_err();
        assert!(err.to_string().contains("W_K[0]"), "{err}");
    }

    #[test]
    fn fresh_block_is_identity_and_deterministic() {
        let c = cfg(2, 4, 2, true);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ps = ParamSet::new();
        let idx = add_block(&mut ps, "b0", &c, 8, &mut rng);
        let x = Tensor::randn(&[5, 4], 1.0, &mut rng);
        let y = transformer_block(&x, &ps, &idx, &c).unwrap();
        assert_eq!(y, x);

        let mut rng2 = ChaCha8Rng::seed_from_u64(3);
        let mut ps2 = ParamSet::new();
        add_block(&mut ps2, "b0", &c, 8, &mut rng2);
        assert_eq!(ps, ps2);
    }
}
