use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::nn::{add_block, block_graph, layer_norm_affine, AttentionConfig, BlockIdx, ParamSet, INIT_SD};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Shape of a decoder-only causal Transformer stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub model_dim: usize,
    pub head_dim: usize,
    pub ff_dim: usize,
    /// Number of learned absolute positions.
    pub max_len: usize,
}

impl BackboneConfig {
    pub fn attention(&self) -> AttentionConfig {
        AttentionConfig {
            n_heads: self.n_heads,
            model_dim: self.model_dim,
            head_dim: self.head_dim,
            causal: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.attention().validate()?;
        if self.n_layers == 0 || self.ff_dim == 0 || self.max_len == 0 {
            return Err(Error::Config(format!("degenerate backbone {self:?}")));
        }
        Ok(())
    }
}

/// Positions of backbone tensors inside a model's [`ParamSet`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Backbone {
    pub cfg: BackboneConfig,
    pub pos: usize,
    pub blocks: Vec<BlockIdx>,
    pub lnf_gain: usize,
    pub lnf_bias: usize,
}

impl Backbone {
    /// Registers position embeddings, blocks and the final layer norm.
    pub fn register<R: Rng + ?Sized>(ps: &mut ParamSet, cfg: BackboneConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let att = cfg.attention();
        let pos = ps.add("pos", Tensor::randn(&[cfg.max_len, cfg.model_dim], INIT_SD, rng));
        let blocks = (0..cfg.n_layers)
            .map(|l| add_block(ps, &format!("block{l}"), &att, cfg.ff_dim, rng))
            .collect();
        let lnf_gain = ps.add("lnf.gain", Tensor::filled(&[1, cfg.model_dim], 1.0));
        let lnf_bias = ps.add("lnf.bias", Tensor::zeros(&[1, cfg.model_dim]));
        Ok(Self {
            cfg,
            pos,
            blocks,
            lnf_gain,
            lnf_bias,
        })
    }

    fn with_positions(&self, g: &mut Graph, vars: &[Var], x: Var) -> Var {
        let t = g.value(x).rows();
        assert!(t <= self.cfg.max_len, "sequence of {t} exceeds {} positions", self.cfg.max_len);
        let pos = g.slice_rows(vars[self.pos], 0, t);
        g.add(x, pos)
    }

    /// Full `T×d` hidden states after the final layer norm.
    pub fn graph(&self, g: &mut Graph, vars: &[Var], x: Var) -> Var {
        let att = self.cfg.attention();
        let mut h = self.with_positions(g, vars, x);
        for b in &self.blocks {
            h = block_graph(g, h, vars, b, &att);
        }
        layer_norm_affine(g, h, vars[self.lnf_gain], vars[self.lnf_bias])
    }

    /// Hidden state of the last position only (`1×d`). Equal to the last row
    /// of [`Backbone::graph`] but skips the other queries of the final block.
    pub fn last_row(&self, g: &mut Graph, vars: &[Var], x: Var) -> Var {
        let att = self.cfg.attention();
        let mut h = self.with_positions(g, vars, x);
        let (last, rest) = self.blocks.split_last().expect("at least one block");
        for b in rest {
            h = block_graph(g, h, vars, b, &att);
        }
        let t = g.value(h).rows();
        let v = |i: usize| vars[i];
        let a_in = layer_norm_affine(g, h, v(last.ln1_gain), v(last.ln1_bias));
        let a_last = g.slice_rows(a_in, t - 1, 1);
        let scale = 1.0 / (att.head_dim as f64).sqrt();
        let mut heads = Vec::with_capacity(att.n_heads);
        for k in 0..att.n_heads {
            let q = g.matmul(a_last, v(last.wq[k]));
            let keys = g.matmul(a_in, v(last.wk[k]));
            let vals = g.matmul(a_in, v(last.wv[k]));
            let s = g.matmul_bt(q, keys);
            let s = g.scale(s, scale);
            let w = g.softmax_rows(s);
            heads.push(g.matmul(w, vals));
        }
        let cat = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads) };
        let attn = g.matmul(cat, v(last.wo));
        let h_last = g.slice_rows(h, t - 1, 1);
        let h1 = g.add(h_last, attn);
        let f_in = layer_norm_affine(g, h1, v(last.ln2_gain), v(last.ln2_bias));
        let f1 = g.matmul(f_in, v(last.ff1_w));
        let f1 = g.add_row(f1, v(last.ff1_b));
        let f1 = g.relu(f1);
        let f2 = g.matmul(f1, v(last.ff2_w));
        let f2 = g.add_row(f2, v(last.ff2_b));
        let out = g.add(h1, f2);
        layer_norm_affine(g, out, vars[self.lnf_gain], vars[self.lnf_bias])
    }
}
