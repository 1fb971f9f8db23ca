use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Periodic,
    Linear,
    Rbf,
    RationalQuadratic,
    WhiteNoise,
    Constant,
}

impl KernelKind {
    pub const ALL: [KernelKind; 6] = [
        KernelKind::Periodic,
        KernelKind::Linear,
        KernelKind::Rbf,
        KernelKind::RationalQuadratic,
        KernelKind::WhiteNoise,
        KernelKind::Constant,
    ];
}

/// A base covariance function on the integer grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseKernel {
    Periodic { variance: f64, length_scale: f64, period: f64 },
    Linear { variance: f64 },
    Rbf { variance: f64, length_scale: f64 },
    RationalQuadratic { variance: f64, length_scale: f64, alpha: f64 },
    WhiteNoise { variance: f64 },
    Constant { variance: f64 },
}

impl BaseKernel {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let r = (x - y).abs();
        match *self {
            BaseKernel::Periodic {
                variance,
                length_scale,
                period,
            } => {
                let s = (std::f64::consts::PI * r / period).sin();
                variance * (-2.0 * s * s / (length_scale * length_scale)).exp()
            }
            BaseKernel::Linear { variance } => variance * x * y,
            BaseKernel::Rbf { variance, length_scale } => {
                variance * (-r * r / (2.0 * length_scale * length_scale)).exp()
            }
            BaseKernel::RationalQuadratic {
                variance,
                length_scale,
                alpha,
            } => variance * (1.0 + r * r / (2.0 * alpha * length_scale * length_scale)).powf(-alpha),
            BaseKernel::WhiteNoise { variance } => {
                if x == y {
                    variance
                } else {
                    0.0
                }
            }
            BaseKernel::Constant { variance } => variance,
        }
    }

    fn positive_params(&self) -> Vec<(&'static str, f64)> {
        match *self {
            BaseKernel::Periodic {
                variance,
                length_scale,
                period,
            } => vec![("variance", variance), ("length_scale", length_scale), ("period", period)],
            BaseKernel::Linear { variance } | BaseKernel::WhiteNoise { variance } | BaseKernel::Constant { variance } => {
                vec![("variance", variance)]
            }
            BaseKernel::Rbf { variance, length_scale } => vec![("variance", variance), ("length_scale", length_scale)],
            BaseKernel::RationalQuadratic {
                variance,
                length_scale,
                alpha,
            } => vec![("variance", variance), ("length_scale", length_scale), ("alpha", alpha)],
        }
    }
}

impl fmt::Display for BaseKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            BaseKernel::Periodic {
                variance,
                length_scale,
                period,
            } => write!(f, "Periodic(s2={variance:.4}, l={length_scale:.4}, p={period:.4})"),
            BaseKernel::Linear { variance } => write!(f, "Linear(s2={variance:.4})"),
            BaseKernel::Rbf { variance, length_scale } => write!(f, "RBF(s2={variance:.4}, l={length_scale:.4})"),
            BaseKernel::RationalQuadratic {
                variance,
                length_scale,
                alpha,
            } => write!(f, "RQ(s2={variance:.4}, l={length_scale:.4}, a={alpha:.4})"),
            BaseKernel::WhiteNoise { variance } => write!(f, "White(s2={variance:.4})"),
            BaseKernel::Constant { variance } => write!(f, "Const(s2={variance:.4})"),
        }
    }
}

/// Sum/product composition tree over base kernels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelSpec {
    Leaf(BaseKernel),
    Sum(Box<KernelSpec>, Box<KernelSpec>),
    Product(Box<KernelSpec>, Box<KernelSpec>),
}

impl KernelSpec {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            KernelSpec::Leaf(k) => k.eval(x, y),
            KernelSpec::Sum(a, b) => a.eval(x, y) + b.eval(x, y),
            KernelSpec::Product(a, b) => a.eval(x, y) * b.eval(x, y),
        }
    }

    pub fn leaves(&self) -> usize {
        match self {
            KernelSpec::Leaf(_) => 1,
            KernelSpec::Sum(a, b) | KernelSpec::Product(a, b) => a.leaves() + b.leaves(),
        }
    }

    /// Edges on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        match self {
            KernelSpec::Leaf(_) => 0,
            KernelSpec::Sum(a, b) | KernelSpec::Product(a, b) => 1 + a.depth().max(b.depth()),
        }
    }

    /// True when every off-diagonal covariance vanishes.
    pub fn is_diagonal(&self) -> bool {
        match self {
            KernelSpec::Leaf(k) => matches!(k, BaseKernel::WhiteNoise { .. }),
            KernelSpec::Sum(a, b) => a.is_diagonal() && b.is_diagonal(),
            KernelSpec::Product(a, b) => a.is_diagonal() || b.is_diagonal(),
        }
    }

    pub fn validate(&self, max_depth: usize) -> Result<()> {
        if self.depth() > max_depth {
            return Err(Error::Config(format!("kernel depth {} exceeds {max_depth}", self.depth())));
        }
        self.check_params()
    }

    fn check_params(&self) -> Result<()> {
        match self {
            KernelSpec::Leaf(k) => {
                for (name, v) in k.positive_params() {
                    if !(v > 0.0 && v.is_finite()) {
                        return Err(Error::Config(format!("{k}: {name} must be positive, got {v}")));
                    }
                }
                Ok(())
            }
            KernelSpec::Sum(a, b) | KernelSpec::Product(a, b) => {
                a.check_params()?;
                b.check_params()
            }
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Leaf(k) => write!(f, "{k}"),
            KernelSpec::Sum(a, b) => write!(f, "({a} + {b})"),
            KernelSpec::Product(a, b) => write!(f, "({a} * {b})"),
        }
    }
}

/// Allowed kinds and hyperparameter priors for random kernel composition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BankConfig {
    pub kinds: Vec<KernelKind>,
    pub max_leaves: usize,
    pub max_depth: usize,
    /// Log-uniform range for variances.
    pub variance: (f64, f64),
    /// Log-uniform range for length-scales.
    pub length_scale: (f64, f64),
    /// Log-uniform range for the rational-quadratic shape.
    pub alpha: (f64, f64),
    pub min_period: f64,
    /// Grid length the periods are drawn for; periods lie in `[min_period, grid_len/4]`.
    pub grid_len: usize,
}

impl Default for BankConfig {
    fn default() -> Self {
        Self {
            kinds: KernelKind::ALL.to_vec(),
            max_leaves: 5,
            max_depth: 4,
            variance: (0.1, 10.0),
            length_scale: (0.1, 10.0),
            alpha: (0.1, 10.0),
            min_period: 4.0,
            grid_len: 1024,
        }
    }
}

fn log_uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo >= hi {
        return lo;
    }
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

fn sample_base<R: Rng + ?Sized>(rng: &mut R, kind: KernelKind, bank: &BankConfig) -> BaseKernel {
    let variance = log_uniform(rng, bank.variance);
    match kind {
        KernelKind::Periodic => {
            let hi = (bank.grid_len as f64 / 4.0).max(bank.min_period);
            let period = if hi > bank.min_period {
                rng.random_range(bank.min_period..hi)
            } else {
                bank.min_period
            };
            BaseKernel::Periodic {
                variance,
                length_scale: log_uniform(rng, bank.length_scale),
                period,
            }
        }
        KernelKind::Linear => BaseKernel::Linear { variance },
        KernelKind::Rbf => BaseKernel::Rbf {
            variance,
            length_scale: log_uniform(rng, bank.length_scale),
        },
        KernelKind::RationalQuadratic => BaseKernel::RationalQuadratic {
            variance,
            length_scale: log_uniform(rng, bank.length_scale),
            alpha: log_uniform(rng, bank.alpha),
        },
        KernelKind::WhiteNoise => BaseKernel::WhiteNoise { variance },
        KernelKind::Constant => BaseKernel::Constant { variance },
    }
}

/// Draws `1..=max_leaves` base kernels with replacement and folds them
/// left-to-right with uniformly random sums and products.
pub fn sample_kernel_spec<R: Rng + ?Sized>(rng: &mut R, bank: &BankConfig) -> Result<KernelSpec> {
    if bank.kinds.is_empty() {
        return Err(Error::Config("kernel bank is empty".into()));
    }
    if bank.max_leaves == 0 {
        return Err(Error::Config("max_leaves must be at least 1".into()));
    }
    let leaves = rng.random_range(1..=bank.max_leaves.min(bank.max_depth + 1));
    let draw = |rng: &mut R| {
        let kind = bank.kinds[rng.random_range(0..bank.kinds.len())];
        KernelSpec::Leaf(sample_base(rng, kind, bank))
    };
    let mut spec = draw(rng);
    for _ in 1..leaves {
        let next = draw(rng);
        spec = if rng.random_bool(0.5) {
            KernelSpec::Sum(Box::new(spec), Box::new(next))
        } else {
            KernelSpec::Product(Box::new(spec), Box::new(next))
        };
    }
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn singleton_bank_gives_constant() {
        let bank = BankConfig {
            kinds: vec![KernelKind::Constant],
            max_leaves: 1,
            ..Default::default()
        };
        let spec = sample_kernel_spec(&mut ChaCha8Rng::seed_from_u64(3), &bank).unwrap();
        assert!(matches!(spec, KernelSpec::Leaf(BaseKernel::Constant { .. })));
    }

    #[test]
    fn empty_bank_is_a_config_error() {
        let bank = BankConfig { kinds: vec![], ..Default::default() };
        assert!(matches!(
            sample_kernel_spec(&mut ChaCha8Rng::seed_from_u64(0), &bank),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn leaf_counts_cover_one_to_max() {
        let bank = BankConfig { max_leaves: 3, ..Default::default() };
        let mut seen = [0usize; 4];
        for seed in 0..1000 {
            let spec = sample_kernel_spec(&mut ChaCha8Rng::seed_from_u64(seed), &bank).unwrap();
            seen[spec.leaves()] += 1;
            assert!(spec.depth() <= 4);
            spec.validate(4).unwrap();
        }
        assert_eq!(seen[0], 0);
        assert!(seen[1..].iter().all(|&c| c > 0));
    }

    #[test]
    fn same_seed_same_spec() {
        let bank = BankConfig::default();
        let a = sample_kernel_spec(&mut ChaCha8Rng::seed_from_u64(11), &bank).unwrap();
        let b = sample_kernel_spec(&mut ChaCha8Rng::seed_from_u64(11), &bank).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn base_kernel_values() {
        let p = BaseKernel::Periodic {
            variance: 2.0,
            length_scale: 1.0,
            period: 4.0,
        };
        assert!((p.eval(0.0, 4.0) - 2.0).abs() < 1e-12);
        assert!((p.eval(0.0, 2.0) - 2.0 * (-2.0f64).exp()).abs() < 1e-12);
        let rq = BaseKernel::RationalQuadratic {
            variance: 1.0,
            length_scale: 1.0,
            alpha: 1.0,
        };
        assert!((rq.eval(0.0, 2.0) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(BaseKernel::Linear { variance: 2.0 }.eval(3.0, 4.0), 24.0);
        assert_eq!(BaseKernel::WhiteNoise { variance: 1.0 }.eval(1.0, 2.0), 0.0);
        let bad = KernelSpec::Leaf(BaseKernel::Rbf {
            variance: -1.0,
            length_scale: 1.0,
        });
        assert!(bad.validate(4).is_err());
    }
}
