use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::patch::{patchify, sign_direction, PatchConfig, PatchSeries};
use crate::error::{Error, Result};
use crate::stats;
use crate::tensorcore::nn::linear;
use crate::tensorcore::{Backbone, BackboneConfig, Graph, ModelCheckpoint, Objective, ParamSet, Regime, Tensor, Var};

pub const FAMILY: &str = "timesfm";
pub const DEFAULT_MASK_PROB: f64 = 0.15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimesFmConfig {
    pub patch: PatchConfig,
    pub backbone: BackboneConfig,
    #[serde(default = "default_mask_prob")]
    pub mask_prob: f64,
    /// Subtract the context mean and divide by its sd before patching.
    #[serde(default = "default_true")]
    pub standardize: bool,
}

fn default_mask_prob() -> f64 {
    DEFAULT_MASK_PROB
}

fn default_true() -> bool {
    true
}

impl Default for TimesFmConfig {
    /// 2 layers at width 128 with 32-step input patches.
    fn default() -> Self {
        Self {
            patch: PatchConfig::default(),
            backbone: BackboneConfig {
                n_layers: 2,
                n_heads: 4,
                model_dim: 128,
                head_dim: 32,
                ff_dim: 256,
                max_len: 64,
            },
            mask_prob: DEFAULT_MASK_PROB,
            standardize: true,
        }
    }
}

impl TimesFmConfig {
    /// One narrow layer for desk-scale runs.
    pub fn tiny() -> Self {
        Self {
            patch: PatchConfig {
                embed_dim: 32,
                ..PatchConfig::default()
            },
            backbone: BackboneConfig {
                n_layers: 1,
                n_heads: 2,
                model_dim: 32,
                head_dim: 16,
                ff_dim: 64,
                max_len: 64,
            },
            ..Self::default()
        }
    }

    /// Same shape with a different input patch length.
    pub fn with_patch_len(mut self, l: usize) -> Self {
        let ctx = self.max_context();
        self.patch.input_patch_len = l;
        if l > 0 {
            self.backbone.max_len = ctx.div_ceil(l);
        }
        self
    }

    pub fn max_context(&self) -> usize {
        self.backbone.max_len * self.patch.input_patch_len
    }

    pub fn validate(&self) -> Result<()> {
        self.patch.validate()?;
        self.backbone.validate()?;
        if self.patch.embed_dim != self.backbone.model_dim {
            return Err(Error::Config(format!(
                "patch embedding width {} differs from model width {}",
                self.patch.embed_dim, self.backbone.model_dim
            )));
        }
        if !(0.0..1.0).contains(&self.mask_prob) {
            return Err(Error::Config(format!("mask probability {} outside [0, 1)", self.mask_prob)));
        }
        Ok(())
    }
}

/// Two-layer residual MLP `x S + s + relu(x W1 + b1) W2 + b2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Residual {
    skip_w: usize,
    skip_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

impl Residual {
    fn register<R: Rng + ?Sized>(
        ps: &mut ParamSet,
        prefix: &str,
        dims: (usize, usize, usize),
        zero_skip: bool,
        rng: &mut R,
    ) -> Self {
        let (n_in, hidden, n_out) = dims;
        let sd = 1.0 / (n_in as f64).sqrt();
        let skip = if zero_skip {
            Tensor::zeros(&[n_in, n_out])
        } else {
            Tensor::randn(&[n_in, n_out], sd, rng)
        };
        Self {
            skip_w: ps.add(format!("{prefix}.skip.w"), skip),
            skip_b: ps.add(format!("{prefix}.skip.b"), Tensor::zeros(&[1, n_out])),
            w1: ps.add(format!("{prefix}.w1"), Tensor::randn(&[n_in, hidden], sd, rng)),
            b1: ps.add(format!("{prefix}.b1"), Tensor::zeros(&[1, hidden])),
            w2: ps.add(format!("{prefix}.w2"), Tensor::zeros(&[hidden, n_out])),
            b2: ps.add(format!("{prefix}.b2"), Tensor::zeros(&[1, n_out])),
        }
    }

    fn graph(&self, g: &mut Graph, vars: &[Var], x: Var) -> Var {
        let skip = linear(g, x, vars[self.skip_w], vars[self.skip_b]);
        let h = linear(g, x, vars[self.w1], vars[self.b1]);
        let h = g.relu(h);
        let y = linear(g, h, vars[self.w2], vars[self.b2]);
        g.add(skip, y)
    }
}

/// Mean and sd used to standardize one context; the sd falls back to 1 for
/// constant or single-value contexts.
pub fn context_stats(context: &[f64]) -> (f64, f64) {
    let m = stats::mean(context).unwrap_or(0.0);
    let s = stats::sample_sd(context).filter(|s| *s > 1e-12 && s.is_finite()).unwrap_or(1.0);
    (m, s)
}

/// A patch-level training example after standardization.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedWindow {
    pub series: PatchSeries,
    /// `M × output_patch_len` targets in model space.
    pub targets: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Patch encoder, causal decoder stack and residual horizon head.
#[derive(Clone, Debug, PartialEq)]
pub struct TimesFmModel {
    cfg: TimesFmConfig,
    params: ParamSet,
    encoder: Residual,
    backbone: Backbone,
    decoder: Residual,
}

impl TimesFmModel {
    pub fn new(cfg: TimesFmConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let l = cfg.patch.input_patch_len;
        let h = cfg.patch.embed_dim;
        let encoder = Residual::register(&mut params, "enc", (2 * l, h, h), false, &mut rng);
        let backbone = Backbone::register(&mut params, cfg.backbone, &mut rng)?;
        let decoder = Residual::register(&mut params, "dec", (h, h, cfg.patch.output_patch_len), true, &mut rng);
        Ok(Self {
            cfg,
            params,
            encoder,
            backbone,
            decoder,
        })
    }

    pub fn config(&self) -> &TimesFmConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn check_series(&self, ps: &PatchSeries) -> Result<()> {
        if ps.patch_len() != self.cfg.patch.input_patch_len {
            return Err(Error::dim("patch length", self.cfg.patch.input_patch_len, ps.patch_len()));
        }
        if ps.n_patches() > self.cfg.backbone.max_len {
            return Err(Error::dim("patch count", format!("<= {}", self.cfg.backbone.max_len), ps.n_patches()));
        }
        Ok(())
    }

    fn input(g: &mut Graph, ps: &PatchSeries) -> Var {
        let t = Tensor::matrix(ps.n_patches(), 2 * ps.patch_len(), ps.encoder_input()).expect("patch layout");
        g.constant(t)
    }

    fn graph(&self, g: &mut Graph, vars: &[Var], ps: &PatchSeries, last_only: bool) -> Var {
        let x = Self::input(g, ps);
        let e = self.encoder.graph(g, vars, x);
        let h = if last_only {
            self.backbone.last_row(g, vars, e)
        } else {
            self.backbone.graph(g, vars, e)
        };
        self.decoder.graph(g, vars, h)
    }

    /// `M×h` patch embeddings.
    pub fn encode(&self, ps: &PatchSeries) -> Result<Tensor> {
        self.check_series(ps)?;
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g, false);
        let x = Self::input(&mut g, ps);
        let e = self.encoder.graph(&mut g, &vars, x);
        Ok(g.value(e).clone())
    }

    /// Maps `k×h` hidden states to `k×output_patch_len` horizons.
    pub fn decode(&self, hidden: &Tensor) -> Result<Tensor> {
        if hidden.cols() != self.cfg.patch.embed_dim {
            return Err(Error::dim("hidden width", self.cfg.patch.embed_dim, hidden.cols()));
        }
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g, false);
        let h = g.constant(hidden.clone());
        let y = self.decoder.graph(&mut g, &vars, h);
        Ok(g.value(y).clone())
    }

    /// `M × output_patch_len` predictions in model space; row `i` forecasts
    /// the values right after patch `i`.
    pub fn forward_patches(&self, ps: &PatchSeries) -> Result<Tensor> {
        self.check_series(ps)?;
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g, false);
        let y = self.graph(&mut g, &vars, ps, false);
        Ok(g.value(y).clone())
    }

    fn stats(&self, context: &[f64]) -> (f64, f64) {
        if self.cfg.standardize {
            context_stats(context)
        } else {
            (0.0, 1.0)
        }
    }

    /// Next `output_patch_len` values after `context`, in the original scale.
    /// Contexts longer than the model's window keep their most recent values.
    pub fn forecast(&self, context: &[f64]) -> Result<Vec<f64>> {
        if context.is_empty() {
            return Err(Error::Contract("context must hold at least one value".into()));
        }
        let ctx = &context[context.len().saturating_sub(self.cfg.max_context())..];
        let (m, s) = self.stats(ctx);
        let z: Vec<f64> = ctx.iter().map(|v| (v - m) / s).collect();
        let ps = patchify(&z, self.cfg.patch.input_patch_len)?;
        self.check_series(&ps)?;
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g, false);
        let y = self.graph(&mut g, &vars, &ps, true);
        Ok(g.value(y).data().iter().map(|v| v * s + m).collect())
    }

    /// Point forecast and its sign as a 1/0 up probability.
    pub fn point_forecast(&self, context: &[f64]) -> Result<(f64, f64)> {
        let p = self.forecast(context)?[0];
        Ok((p, if sign_direction(p) { 1.0 } else { 0.0 }))
    }

    /// Feeds each predicted patch back as context until `steps` values exist.
    pub fn rolling_forecast(&self, context: &[f64], steps: usize) -> Result<Vec<f64>> {
        rolling_with(context, steps, |c| self.forecast(c))
    }

    /// Standardizes a `C + output_patch_len` window with its first `C`
    /// values and lines up next-patch targets for every patch.
    pub fn prepare(&self, window: &[f64]) -> Result<PreparedWindow> {
        let out = self.cfg.patch.output_patch_len;
        if window.len() <= out {
            return Err(Error::Contract(format!("training window needs more than {out} values")));
        }
        let c = window.len() - out;
        if c > self.cfg.max_context() {
            return Err(Error::dim("context", format!("<= {}", self.cfg.max_context()), c));
        }
        let (m, s) = self.stats(&window[..c]);
        let z: Vec<f64> = window.iter().map(|v| (v - m) / s).collect();
        let series = patchify(&z[..c], self.cfg.patch.input_patch_len)?;
        let mut targets = Vec::with_capacity(series.n_patches() * out);
        for i in 0..series.n_patches() {
            let e = series.patch_end(i);
            targets.extend_from_slice(&z[e + 1..e + 1 + out]);
        }
        let weights = vec![1.0; targets.len()];
        Ok(PreparedWindow {
            series,
            targets,
            weights,
        })
    }

    /// Draws a truncation point: every patch is flagged independently with
    /// probability `mask_prob` and everything up to the last flagged patch is
    /// zeroed, flagged missing and left out of the loss.
    pub fn apply_mask<R: Rng + ?Sized>(&self, w: &mut PreparedWindow, rng: &mut R) {
        let p = self.cfg.mask_prob;
        if p <= 0.0 {
            return;
        }
        let m = w.series.n_patches();
        let last = (0..m).filter(|_| rng.random_bool(p)).last();
        if let Some(k) = last {
            w.series.truncate_prefix(k);
            let out = self.cfg.patch.output_patch_len;
            w.weights[..(k + 1) * out].fill(0.0);
        }
    }

    /// Weighted squared error summed over the prediction slots of one window.
    fn window_sse(&self, g: &mut Graph, vars: &[Var], w: &PreparedWindow) -> Var {
        let y = self.graph(g, vars, &w.series, false);
        let mse = g.mse(y, &w.targets, Some(&w.weights));
        let wsum: f64 = w.weights.iter().sum();
        g.scale(mse, wsum)
    }

    /// Mean squared next-patch error over the unmasked slots of a batch.
    pub fn batch_mse(&self, g: &mut Graph, vars: &[Var], batch: &[PreparedWindow]) -> Var {
        let parts: Vec<Var> = batch.iter().map(|w| self.window_sse(g, vars, w)).collect();
        let cat = if parts.len() == 1 { parts[0] } else { g.concat_cols(&parts) };
        let total = g.sum(cat);
        let wsum: f64 = batch.iter().flat_map(|w| &w.weights).sum();
        g.scale(total, 1.0 / wsum.max(f64::MIN_POSITIVE))
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
        let cfg: TimesFmConfig = serde_json::from_value(ck.descriptor.architecture.clone())?;
        let mut m = Self::new(cfg, 0)?;
        m.params.copy_from(&ck.params)?;
        Ok(m)
    }
}

/// Rollout driver shared by the model: calls `step` on the growing context
/// until `steps` values are produced.
pub fn rolling_with<F>(context: &[f64], steps: usize, mut step: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if steps == 0 {
        return Err(Error::Contract("rollout needs at least one step".into()));
    }
    let mut ctx = context.to_vec();
    let mut out = Vec::with_capacity(steps);
    while out.len() < steps {
        let p = step(&ctx)?;
        if p.is_empty() {
            return Err(Error::Contract("model produced an empty horizon".into()));
        }
        ctx.extend_from_slice(&p);
        out.extend_from_slice(&p);
    }
    out.truncate(steps);
    Ok(out)
}

impl Objective for TimesFmModel {
    type Example = Vec<f64>;

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn batch_loss(&self, g: &mut Graph, vars: &[Var], batch: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Var {
        let clean: Vec<PreparedWindow> = batch
            .iter()
            .map(|w| self.prepare(w).expect("training windows are validated by the sampler"))
            .collect();
        let mut attempt = 0;
        let prepared = loop {
            let mut b = clean.clone();
            for w in &mut b {
                self.apply_mask(w, rng);
            }
            if b.iter().flat_map(|w| &w.weights).any(|&x| x > 0.0) {
                break b;
            }
            attempt += 1;
            log::debug!("every prediction slot masked; resampling batch masks (attempt {attempt})");
        };
        self.batch_mse(g, vars, &prepared)
    }
}
