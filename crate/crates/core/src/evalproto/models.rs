use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::TrainingData;
use super::derive_seed;
use crate::chronos::{fit_dynamic_bounds, ChronosConfig, ChronosModel, TokenizerMode};
use crate::error::{Error, Result};
use crate::gbt::{boost, BoostParams, BoostedEnsemble};
use crate::linreg::{fit_huber_linear, fit_pcr, LinearFamily, LinearModel, PcrModel, HUBER_DELTA};
use crate::nnbench::{FnnModel, FnnSpec};
use crate::tensorcore::{train_loop, ModelCheckpoint, Regime, TrainSchedule};
use crate::timesfm::{TimesFmConfig, TimesFmModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Chronos,
    Timesfm,
    Linear,
    Pcr,
    Gbt,
    Fnn,
}

impl FamilyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FamilyKind::Chronos => "chronos",
            FamilyKind::Timesfm => "timesfm",
            FamilyKind::Linear => "linear",
            FamilyKind::Pcr => "pcr",
            FamilyKind::Gbt => "gbt",
            FamilyKind::Fnn => "fnn",
        }
    }

    /// Families that follow the plan's zero-shot / fine-tune / scratch regime.
    pub fn is_foundation(self) -> bool {
        matches!(self, FamilyKind::Chronos | FamilyKind::Timesfm)
    }
}

fn default_l1_ratio() -> f64 {
    0.5
}

/// One hyperparameter point of a model family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Candidate {
    Chronos {
        config: ChronosConfig,
        #[serde(default)]
        train: TrainSchedule,
    },
    Timesfm {
        config: TimesFmConfig,
        #[serde(default)]
        train: TrainSchedule,
    },
    Linear {
        kind: LinearFamily,
        alpha: f64,
        #[serde(default = "default_l1_ratio")]
        l1_ratio: f64,
    },
    Pcr {
        components: usize,
    },
    Gbt {
        params: BoostParams,
    },
    Fnn {
        spec: FnnSpec,
    },
}

impl Candidate {
    pub fn family(&self) -> FamilyKind {
        match self {
            Candidate::Chronos { .. } => FamilyKind::Chronos,
            Candidate::Timesfm { .. } => FamilyKind::Timesfm,
            Candidate::Linear { .. } => FamilyKind::Linear,
            Candidate::Pcr { .. } => FamilyKind::Pcr,
            Candidate::Gbt { .. } => FamilyKind::Gbt,
            Candidate::Fnn { .. } => FamilyKind::Fnn,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Candidate::Chronos { config, .. } => config.validate(),
            Candidate::Timesfm { config, .. } => config.validate(),
            Candidate::Linear { kind, alpha, l1_ratio } => kind.penalty(*alpha, *l1_ratio, 1).validate(),
            Candidate::Pcr { components } if *components == 0 => {
                Err(Error::Config("principal component count must be positive".into()))
            }
            Candidate::Pcr { .. } => Ok(()),
            Candidate::Gbt { params } => params.validate(),
            Candidate::Fnn { spec } => spec.validate(),
        }
    }
}

/// Everything a fit needs besides the data.
#[derive(Clone, Copy, Debug)]
pub struct FitContext<'a> {
    pub window: usize,
    pub regime: Regime,
    pub base: Option<&'a ModelCheckpoint>,
    pub seed: u64,
    pub max_pairs: usize,
}

/// A fitted model of any family.
#[derive(Clone, Debug, PartialEq)]
pub enum Trained {
    Chronos(Box<ChronosModel>),
    Timesfm(Box<TimesFmModel>),
    Linear(LinearModel),
    Pcr(PcrModel),
    Gbt(BoostedEnsemble),
    Fnn(Box<FnnModel>),
}

impl Trained {
    /// Point forecast, optional up probability and the number of draws
    /// behind them. `seed` drives sampling models only.
    pub fn predict(&self, context: &[f64], seed: u64) -> Result<(f64, Option<f64>, usize)> {
        match self {
            Trained::Chronos(m) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (mean, up) = m.forecast(context, &mut rng)?;
                Ok((mean, Some(up), m.config().n_samples))
            }
            Trained::Timesfm(m) => {
                let (p, up) = m.point_forecast(context)?;
                Ok((p, Some(up), 1))
            }
            Trained::Linear(m) => Ok((m.predict(context)?, None, 1)),
            Trained::Pcr(m) => Ok((m.predict(context)?, None, 1)),
            Trained::Gbt(m) => Ok((m.predict(context)?, None, 1)),
            Trained::Fnn(m) => Ok((m.predict(context)?, None, 1)),
        }
    }

    /// Serialized parameters: a tensor checkpoint for network models, JSON
    /// for the others.
    pub fn checkpoint_bytes(&self, regime: Regime, cutoff: Option<NaiveDate>) -> Vec<u8> {
        match self {
            Trained::Chronos(m) => m.to_checkpoint(regime, cutoff).to_bytes(),
            Trained::Timesfm(m) => m.to_checkpoint(regime, cutoff).to_bytes(),
            Trained::Fnn(m) => m.to_checkpoint(regime, cutoff).to_bytes(),
            Trained::Linear(m) => serde_json::to_vec(m).expect("model serializes"),
            Trained::Pcr(m) => serde_json::to_vec(m).expect("model serializes"),
            Trained::Gbt(m) => serde_json::to_vec(m).expect("model serializes"),
        }
    }

    pub fn checkpoint_extension(&self) -> &'static str {
        match self {
            Trained::Chronos(_) | Trained::Timesfm(_) | Trained::Fnn(_) => "tsfc",
            _ => "json",
        }
    }
}

fn base_for<'a>(ctx: &FitContext<'a>) -> Result<&'a ModelCheckpoint> {
    ctx.base
        .ok_or_else(|| Error::Regime(format!("{} needs a base checkpoint", ctx.regime)))
}

fn train_schedule(train: &TrainSchedule, seed: u64) -> TrainSchedule {
    TrainSchedule {
        seed: derive_seed(seed, "train"),
        ..*train
    }
}

fn check_stream(data: &TrainingData, len: usize) -> Result<()> {
    if data.has_window(len) {
        Ok(())
    } else {
        Err(Error::Validation(format!("no training series holds {len} values")))
    }
}

fn fit_chronos(config: &ChronosConfig, train: &TrainSchedule, data: &TrainingData, ctx: &FitContext) -> Result<Trained> {
    let c = ctx.window;
    let dynamic = |cfg: &ChronosConfig| -> Result<Option<crate::chronos::TokenizerConfig>> {
        if cfg.tokenizer.mode == TokenizerMode::Dynamic {
            let bounds = fit_dynamic_bounds(&data.scaled_chunks(c))?;
            Ok(Some(cfg.tokenizer.clone().with_bounds(bounds)?))
        } else {
            Ok(None)
        }
    };
    let mut m = match ctx.regime {
        Regime::Scratch => {
            let mut cfg = config.clone();
            cfg.backbone.max_len = c;
            if let Some(t) = dynamic(&cfg)? {
                cfg.tokenizer = t;
            }
            ChronosModel::new(cfg, derive_seed(ctx.seed, "init"))?
        }
        Regime::FineTune => {
            let mut m = ChronosModel::from_checkpoint(base_for(ctx)?)?;
            if let Some(t) = dynamic(m.config())? {
                m.set_tokenizer(t)?;
            }
            m
        }
        Regime::ZeroShot => ChronosModel::from_checkpoint(base_for(ctx)?)?,
    };
    if ctx.regime != Regime::ZeroShot && train.steps > 0 {
        if c > m.config().context_len() {
            return Err(Error::Regime(format!(
                "window {c} exceeds the base model context {}",
                m.config().context_len()
            )));
        }
        check_stream(data, c + 1)?;
        let rep = train_loop(
            &mut m,
            |rng: &mut ChaCha8Rng| data.sample_window(rng, c + 1).map(<[f64]>::to_vec),
            &train_schedule(train, ctx.seed),
        )?;
        if let Some(msg) = rep.aborted {
            log::warn!("chronos training stopped early: {msg}");
        }
    }
    Ok(Trained::Chronos(Box::new(m)))
}

fn fit_timesfm(config: &TimesFmConfig, train: &TrainSchedule, data: &TrainingData, ctx: &FitContext) -> Result<Trained> {
    let c = ctx.window;
    let mut m = match ctx.regime {
        Regime::Scratch => {
            let mut cfg = config.clone();
            cfg.backbone.max_len = c.div_ceil(cfg.patch.input_patch_len).max(1);
            TimesFmModel::new(cfg, derive_seed(ctx.seed, "init"))?
        }
        Regime::FineTune | Regime::ZeroShot => TimesFmModel::from_checkpoint(base_for(ctx)?)?,
    };
    if ctx.regime != Regime::ZeroShot && train.steps > 0 {
        if c > m.config().max_context() {
            return Err(Error::Regime(format!(
                "window {c} exceeds the base model context {}",
                m.config().max_context()
            )));
        }
        let len = c + m.config().patch.output_patch_len;
        check_stream(data, len)?;
        let rep = train_loop(
            &mut m,
            |rng: &mut ChaCha8Rng| data.sample_window(rng, len).map(<[f64]>::to_vec),
            &train_schedule(train, ctx.seed),
        )?;
        if let Some(msg) = rep.aborted {
            log::warn!("timesfm training stopped early: {msg}");
        }
    }
    Ok(Trained::Timesfm(Box::new(m)))
}

/// Fits `cand` on `data` at the context's window and regime. Benchmark
/// families always train from scratch on lag features.
pub fn fit(cand: &Candidate, data: &TrainingData, ctx: &FitContext) -> Result<Trained> {
    cand.validate()?;
    match cand {
        Candidate::Chronos { config, train } => return fit_chronos(config, train, data, ctx),
        Candidate::Timesfm { config, train } => return fit_timesfm(config, train, data, ctx),
        _ => {}
    }
    let (x, y) = data.pairs(ctx.window, ctx.max_pairs, derive_seed(ctx.seed, "pairs"))?;
    Ok(match cand {
        Candidate::Linear { kind, alpha, l1_ratio } => {
            Trained::Linear(fit_huber_linear(&x, &y, kind.penalty(*alpha, *l1_ratio, y.len()), HUBER_DELTA)?)
        }
        Candidate::Pcr { components } => {
            let k = (*components).min(ctx.window).min(y.len());
            Trained::Pcr(fit_pcr(&x, &y, k)?)
        }
        Candidate::Gbt { params } => Trained::Gbt(boost(&x, &y, params)?),
        Candidate::Fnn { spec } => {
            let spec = FnnSpec {
                input_dim: ctx.window,
                ..*spec
            };
            let mut m = FnnModel::new(spec, derive_seed(ctx.seed, "init"))?;
            let hist = m.train(&x, &y, derive_seed(ctx.seed, "train"))?;
            if let Some(msg) = hist.aborted {
                log::warn!("fnn training stopped early: {msg}");
            }
            Trained::Fnn(Box::new(m))
        }
        Candidate::Chronos { .. } | Candidate::Timesfm { .. } => unreachable!("handled above"),
    })
}

/// Named default grids for the benchmark families at window `c`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    OlsH,
    LassoH,
    RidgeH,
    EnetH,
    Pcr,
    GbtDepth,
    GbtLeaf,
    FnnSmall,
    FnnLarge,
}

impl Preset {
    pub fn grid(self, c: usize) -> Vec<Candidate> {
        use crate::gbt::{Growth, DEPTH_GRID, DEPTH_LR_GRID, LEAVES_GRID, LEAVES_LR_GRID};
        use crate::linreg::{alpha_grid, pcr_candidates, L1_RATIOS};
        let linear = |kind: LinearFamily, ratios: &[f64]| -> Vec<Candidate> {
            alpha_grid()
                .into_iter()
                .flat_map(|alpha| {
                    ratios.iter().map(move |&l1_ratio| Candidate::Linear { kind, alpha, l1_ratio })
                })
                .collect()
        };
        match self {
            Preset::OlsH => linear(LinearFamily::OlsH, &[0.5]),
            Preset::LassoH => linear(LinearFamily::LassoH, &[1.0]),
            Preset::RidgeH => linear(LinearFamily::RidgeH, &[0.0]),
            Preset::EnetH => linear(LinearFamily::EnetH, &L1_RATIOS),
            Preset::Pcr => pcr_candidates(c)
                .into_iter()
                .map(|components| Candidate::Pcr { components })
                .collect(),
            Preset::GbtDepth => DEPTH_GRID
                .iter()
                .flat_map(|&max_depth| {
                    DEPTH_LR_GRID.iter().map(move |&learning_rate| Candidate::Gbt {
                        params: BoostParams {
                            learning_rate,
                            growth: Growth::DepthWise { max_depth },
                            ..BoostParams::default()
                        },
                    })
                })
                .collect(),
            Preset::GbtLeaf => LEAVES_GRID
                .iter()
                .flat_map(|&max_leaves| {
                    LEAVES_LR_GRID.iter().map(move |&learning_rate| Candidate::Gbt {
                        params: BoostParams {
                            learning_rate,
                            growth: Growth::LeafWise {
                                max_leaves,
                                max_depth: None,
                            },
                            ..BoostParams::default()
                        },
                    })
                })
                .collect(),
            Preset::FnnSmall => vec![Candidate::Fnn { spec: FnnSpec::small(c) }],
            Preset::FnnLarge => vec![Candidate::Fnn { spec: FnnSpec::large(c) }],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_grid_sizes() {
        assert_eq!(Preset::OlsH.grid(5).len(), 8);
        assert_eq!(Preset::EnetH.grid(5).len(), 40);
        assert_eq!(Preset::Pcr.grid(512).len(), 6);
        assert_eq!(Preset::GbtDepth.grid(5).len(), 25);
        assert_eq!(Preset::GbtLeaf.grid(5).len(), 15);
        assert_eq!(Preset::FnnLarge.grid(21).len(), 1);
        for p in Preset::GbtDepth.grid(5) {
            assert!(p.validate().is_ok());
            assert_eq!(p.family(), FamilyKind::Gbt);
        }
    }

    #[test]
    fn candidate_json_is_tagged() {
        let c = Candidate::Linear {
            kind: LinearFamily::RidgeH,
            alpha: 0.1,
            l1_ratio: 0.0,
        };
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("\"family\":\"linear\""));
        assert_eq!(serde_json::from_str::<Candidate>(&s).unwrap(), c);
        let bad = r#"{"family":"pcr","components":3,"extra":1}"#;
        assert!(serde_json::from_str::<Candidate>(bad).is_err());
    }
}
