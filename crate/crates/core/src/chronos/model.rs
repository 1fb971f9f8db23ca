use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tokenizer::{mean_scale, point_and_direction, tokenize, TokenizerConfig};
use crate::error::{Error, Result};
use crate::tensorcore::nn::INIT_SD;
use crate::tensorcore::{Backbone, BackboneConfig, Graph, ModelCheckpoint, Objective, ParamSet, Regime, Tensor, Var};

pub const FAMILY: &str = "chronos";
pub const DEFAULT_SAMPLES: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChronosConfig {
    pub tokenizer: TokenizerConfig,
    pub backbone: BackboneConfig,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
}

fn default_samples() -> usize {
    DEFAULT_SAMPLES
}

fn default_temperature() -> f64 {
    1.0
}

impl Default for ChronosConfig {
    /// 2 layers, 2 heads, `d = 64`, `d_k = 32`, 256 bins, context 512.
    fn default() -> Self {
        Self {
            tokenizer: TokenizerConfig::static_range(256),
            backbone: BackboneConfig {
                n_layers: 2,
                n_heads: 2,
                model_dim: 64,
                head_dim: 32,
                ff_dim: 128,
                max_len: 512,
            },
            n_samples: DEFAULT_SAMPLES,
            temperature: 1.0,
        }
    }
}

impl ChronosConfig {
    /// One narrow layer for desk-scale runs.
    pub fn tiny() -> Self {
        Self {
            backbone: BackboneConfig {
                n_layers: 1,
                n_heads: 2,
                model_dim: 16,
                head_dim: 8,
                ff_dim: 32,
                max_len: 512,
            },
            ..Self::default()
        }
    }

    pub fn context_len(&self) -> usize {
        self.backbone.max_len
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.tokenizer.bins < 2 {
            return Err(Error::Config("tokenizer needs at least 2 bins".into()));
        }
        if self.n_samples == 0 || !(self.temperature > 0.0) {
            return Err(Error::Config("sample count and temperature must be positive".into()));
        }
        Ok(())
    }
}

/// Token-level decoder: embeddings, causal Transformer stack, softmax head.
#[derive(Clone, Debug, PartialEq)]
pub struct ChronosModel {
    cfg: ChronosConfig,
    params: ParamSet,
    backbone: Backbone,
    tok_emb: usize,
    head_w: usize,
    head_b: usize,
}

impl ChronosModel {
    pub fn new(cfg: ChronosConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let d = cfg.backbone.model_dim;
        let b = cfg.tokenizer.bins;
        let tok_emb = params.add("tok_emb", Tensor::randn(&[b, d], INIT_SD, &mut rng));
        let backbone = Backbone::register(&mut params, cfg.backbone, &mut rng)?;
        let head_w = params.add("head.w", Tensor::randn(&[d, b], INIT_SD, &mut rng));
        let head_b = params.add("head.b", Tensor::zeros(&[1, b]));
        Ok(Self {
            cfg,
            params,
            backbone,
            tok_emb,
            head_w,
            head_b,
        })
    }

    pub fn config(&self) -> &ChronosConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Replaces the tokenizer, e.g. after fitting dynamic bounds.
    pub fn set_tokenizer(&mut self, tokenizer: TokenizerConfig) -> Result<()> {
        if tokenizer.bins != self.cfg.tokenizer.bins {
            return Err(Error::dim("tokenizer bins", self.cfg.tokenizer.bins, tokenizer.bins));
        }
        self.cfg.tokenizer = tokenizer;
        Ok(())
    }

    fn ids(&self, tokens: &[usize]) -> Result<Vec<usize>> {
        let b = self.cfg.tokenizer.bins;
        tokens
            .iter()
            .map(|&t| {
                if t == 0 || t > b {
                    Err(Error::Decoding { token: t, bins: b })
                } else {
                    Ok(t - 1)
                }
            })
            .collect()
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::Contract("context must hold at least one value".into()));
        }
        if n > self.cfg.context_len() {
            return Err(Error::dim("context", format!("<= {}", self.cfg.context_len()), n));
        }
        Ok(())
    }

    fn logits_graph(&self, g: &mut Graph, vars: &[Var], ids: &[usize], last_only: bool) -> Var {
        let x = g.embedding(vars[self.tok_emb], ids);
        let h = if last_only {
            self.backbone.last_row(g, vars, x)
        } else {
            self.backbone.graph(g, vars, x)
        };
        let y = g.matmul(h, vars[self.head_w]);
        g.add_row(y, vars[self.head_b])
    }

    /// `T×B` next-token logits for a token sequence.
    pub fn logits(&self, tokens: &[usize]) -> Result<Tensor> {
        self.check_len(tokens.len())?;
        let ids = self.ids(tokens)?;
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g, false);
        let out = self.logits_graph(&mut g, &vars, &ids, false);
        Ok(g.value(out).clone())
    }

    /// Categorical distribution over the next token at temperature `cfg.temperature`.
    pub fn next_token_probs(&self, tokens: &[usize]) -> Result<Vec<f64>> {
        self.check_len(tokens.len())?;
        let ids = self.ids(tokens)?;
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g, false);
        let out = self.logits_graph(&mut g, &vars, &ids, true);
        let t = self.cfg.temperature;
        let logits = g.value(out).data();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut p: Vec<f64> = logits.iter().map(|l| ((l - max) / t).exp()).collect();
        let z: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= z);
        Ok(p)
    }

    /// `n` Monte-Carlo draws of the next value given a raw context. Contexts
    /// longer than the model's window keep their most recent values.
    pub fn forecast_distribution<R: Rng + ?Sized>(&self, context: &[f64], n: usize, rng: &mut R) -> Result<Vec<f64>> {
        if context.is_empty() {
            return Err(Error::Contract("context must hold at least one value".into()));
        }
        let ctx = &context[context.len().saturating_sub(self.cfg.context_len())..];
        let ts = tokenize(ctx, &self.cfg.tokenizer)?;
        let probs = self.next_token_probs(&ts.tokens)?;
        (0..n)
            .map(|_| {
                let tok = sample_categorical(&probs, rng);
                self.cfg.tokenizer.dequantize(tok, ts.scale)
            })
            .collect()
    }

    /// Mean forecast and up probability from `cfg.n_samples` draws.
    pub fn forecast<R: Rng + ?Sized>(&self, context: &[f64], rng: &mut R) -> Result<(f64, f64)> {
        let s = self.forecast_distribution(context, self.cfg.n_samples, rng)?;
        point_and_direction(&s)
    }

    /// One sampled path of `steps` values, feeding each draw back as context.
    pub fn rollout<R: Rng + ?Sized>(&self, context: &[f64], steps: usize, rng: &mut R) -> Result<Vec<f64>> {
        let mut ctx = context.to_vec();
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            let v = self.forecast_distribution(&ctx, 1, rng)?[0];
            ctx.push(v);
            out.push(v);
        }
        Ok(out)
    }

    /// Mean next-token cross-entropy of a `C+1` window, scaled by its first
    /// `C` values.
    pub fn window_loss(&self, g: &mut Graph, vars: &[Var], window: &[f64]) -> Result<Var> {
        if window.len() < 2 {
            return Err(Error::Contract("training window needs at least two values".into()));
        }
        let c = window.len() - 1;
        self.check_len(c)?;
        let (s, _) = mean_scale(&window[..c])?;
        let tokens = window
            .iter()
            .map(|v| self.cfg.tokenizer.quantize(v / s))
            .collect::<Result<Vec<_>>>()?;
        let ids = self.ids(&tokens)?;
        let logits = self.logits_graph(g, vars, &ids[..c], false);
        Ok(g.cross_entropy(logits, &ids[1..]))
    }

    pub fn to_checkpoint(&self, regime: Regime, cutoff: Option<NaiveDate>) -> ModelCheckpoint {
        ModelCheckpoint::new(
            FAMILY,
            serde_json::to_value(&self.cfg).expect("config serializes"),
            regime,
            cutoff,
            self.params.clone(),
        )
    }

    pub fn from_checkpoint(ck: &ModelCheckpoint) -> Result<Self> {
        if ck.descriptor.family != FAMILY {
            return Err(Error::Format(format!("expected a {FAMILY} checkpoint, got {}", ck.descriptor.family)));
        }
        let cfg: ChronosConfig = serde_json::from_value(ck.descriptor.architecture.clone())?;
        let mut m = Self::new(cfg, 0)?;
        m.params.copy_from(&ck.params)?;
        Ok(m)
    }
}

pub(crate) fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i + 1;
        }
    }
    // Rounding left `u` above the cumulative sum; take the last positive bin.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1) + 1
}

impl Objective for ChronosModel {
    type Example = Vec<f64>;

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn batch_loss(&self, g: &mut Graph, vars: &[Var], batch: &[Vec<f64>], _rng: &mut ChaCha8Rng) -> Var {
        let losses: Vec<Var> = batch
            .iter()
            .map(|w| self.window_loss(g, vars, w).expect("training windows are validated by the sampler"))
            .collect();
        let cat = if losses.len() == 1 { losses[0] } else { g.concat_cols(&losses) };
        let total = g.sum(cat);
        g.scale(total, 1.0 / batch.len() as f64)
    }
}
