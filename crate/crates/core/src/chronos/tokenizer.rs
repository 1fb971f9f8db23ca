use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::percentile_linear;

pub const MIN_BOUND_VALUES: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerMode {
    /// `[low, high]` as configured (default `[-15, 15]`).
    Static,
    /// Narrow `[-2, 2]` range.
    Restricted,
    /// Range from the 5th/95th percentiles of the scaled training values.
    Dynamic,
}

/// Uniform bin layout over a scaled range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenizerConfig {
    pub bins: usize,
    pub low: f64,
    pub high: f64,
    pub mode: TokenizerMode,
    #[serde(default)]
    pub dynamic_bounds: Option<(f64, f64)>,
}

impl TokenizerConfig {
    pub fn static_range(bins: usize) -> Self {
        Self {
            bins,
            low: -15.0,
            high: 15.0,
            mode: TokenizerMode::Static,
            dynamic_bounds: None,
        }
    }

    pub fn restricted(bins: usize) -> Self {
        Self {
            bins,
            low: -2.0,
            high: 2.0,
            mode: TokenizerMode::Restricted,
            dynamic_bounds: None,
        }
    }

    /// Dynamic layout awaiting [`TokenizerConfig::with_bounds`].
    pub fn dynamic(bins: usize) -> Self {
        Self {
            mode: TokenizerMode::Dynamic,
            ..Self::static_range(bins)
        }
    }

    /// Installs fitted dynamic bounds, rejecting an empty range.
    pub fn with_bounds(mut self, bounds: (f64, f64)) -> Result<Self> {
        self.dynamic_bounds = Some(bounds);
        self.range()?;
        Ok(self)
    }

    /// Effective `(low, high)` after validation.
    pub fn range(&self) -> Result<(f64, f64)> {
        if self.bins < 2 {
            return Err(Error::Config(format!("tokenizer needs at least 2 bins, got {}", self.bins)));
        }
        let (lo, hi) = match self.mode {
            TokenizerMode::Dynamic => self
                .dynamic_bounds
                .ok_or_else(|| Error::Config("dynamic tokenizer used before fitting bounds".into()))?,
            _ => (self.low, self.high),
        };
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Config(format!("tokenizer range [{lo}, {hi}] is empty")));
        }
        Ok((lo, hi))
    }

    /// Distance between adjacent bin centers.
    pub fn bin_width(&self) -> Result<f64> {
        let (lo, hi) = self.range()?;
        Ok((hi - lo) / (self.bins - 1) as f64)
    }

    /// Center of bin `j` in `1..=B`.
    pub fn center(&self, j: usize) -> Result<f64> {
        if j == 0 || j > self.bins {
            return Err(Error::Decoding { token: j, bins: self.bins });
        }
        let (lo, _) = self.range()?;
        Ok(lo + (j - 1) as f64 * self.bin_width()?)
    }

    /// Token in `1..=B` of a scaled value. Edges sit midway between centers;
    /// values below the first edge map to 1 and values at or above the last
    /// edge map to `B`.
    pub fn quantize(&self, x: f64) -> Result<usize> {
        let (lo, _) = self.range()?;
        let w = self.bin_width()?;
        if x.is_nan() {
            return Err(Error::Tokenization("cannot quantize NaN".into()));
        }
        // Bin j (1-based) covers [lo + (j-1.5)w, lo + (j-0.5)w).
        let k = ((x - lo) / w + 0.5).floor();
        Ok(if k < 0.0 {
            1
        } else if k >= (self.bins - 1) as f64 {
            self.bins
        } else {
            k as usize + 1
        })
    }

    pub fn dequantize(&self, token: usize, scale: f64) -> Result<f64> {
        Ok(self.center(token)? * scale)
    }
}

/// Tokenized context window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenSeries {
    pub tokens: Vec<usize>,
    pub scale: f64,
    pub source_len: usize,
}

/// Mean absolute scaling: `s = mean|x|` (1 when zero); returns `(s, x/s)`.
pub fn mean_scale(context: &[f64]) -> Result<(f64, Vec<f64>)> {
    if context.is_empty() {
        return Err(Error::Tokenization("empty context".into()));
    }
    if context.iter().any(|v| !v.is_finite()) {
        return Err(Error::Tokenization("context contains non-finite values".into()));
    }
    let s = context.iter().map(|v| v.abs()).sum::<f64>() / context.len() as f64;
    let s = if s > 0.0 { s } else { 1.0 };
    Ok((s, context.iter().map(|v| v / s).collect()))
}

pub fn tokenize(context: &[f64], cfg: &TokenizerConfig) -> Result<TokenSeries> {
    let (scale, scaled) = mean_scale(context)?;
    let tokens = scaled.iter().map(|&x| cfg.quantize(x)).collect::<Result<Vec<_>>>()?;
    Ok(TokenSeries {
        tokens,
        scale,
        source_len: context.len(),
    })
}

/// Empirical 5th and 95th percentiles (linear interpolation) of scaled values.
pub fn fit_dynamic_bounds(values: &[f64]) -> Result<(f64, f64)> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.len() < MIN_BOUND_VALUES {
        return Err(Error::Config(format!(
            "dynamic bounds need at least {MIN_BOUND_VALUES} finite values, got {}",
            v.len()
        )));
    }
    v.sort_by(f64::total_cmp);
    Ok((percentile_linear(&v, 5.0).unwrap(), percentile_linear(&v, 95.0).unwrap()))
}

/// Mean of samples and fraction strictly above zero.
pub fn point_and_direction(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Contract("no forecast samples".into()));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let up = samples.iter().filter(|&&v| v > 0.0).count() as f64 / n;
    Ok((mean, up))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mean_scale_examples() {
        assert_eq!(mean_scale(&[1.0, -2.0, 3.0]).unwrap(), (2.0, vec![0.5, -1.0, 1.5]));
        assert_eq!(mean_scale(&[0.0; 3]).unwrap(), (1.0, vec![0.0; 3]));
        assert_eq!(mean_scale(&[-4.0]).unwrap(), (4.0, vec![-1.0]));
        assert!(mean_scale(&[f64::NAN]).is_err());
        assert!(mean_scale(&[]).is_err());
    }

    #[test]
    fn quantize_four_bins() {
        let c = TokenizerConfig::static_range(4);
        assert_eq!(c.quantize(0.5).unwrap(), 3);
        assert_eq!(c.quantize(-20.0).unwrap(), 1);
        assert_eq!(c.quantize(10.0).unwrap(), 4);
        assert_eq!(c.quantize(9.999).unwrap(), 3);
        assert_eq!(c.quantize(0.0).unwrap(), 3);
        assert_eq!(c.quantize(-0.001).unwrap(), 2);
        assert_eq!(c.quantize(-10.0).unwrap(), 2);
    }

    #[test]
    fn dequantize_examples() {
        assert_eq!(TokenizerConfig::static_range(4).dequantize(3, 2.0).unwrap(), 10.0);
        assert_eq!(TokenizerConfig::static_range(2).dequantize(1, 1.0).unwrap(), -15.0);
        assert!(matches!(
            TokenizerConfig::static_range(4).dequantize(5, 1.0),
            Err(Error::Decoding { token: 5, bins: 4 })
        ));
        for b in [2, 4, 256] {
            let c = TokenizerConfig::static_range(b);
            for t in 1..=b {
                assert_eq!(c.quantize(c.center(t).unwrap()).unwrap(), t);
            }
        }
    }

    #[test]
    fn dynamic_bounds() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let (lo, hi) = fit_dynamic_bounds(&v).unwrap();
        assert!((lo - 5.95).abs() < 1e-9 && (hi - 95.05).abs() < 1e-9);
        let c = fit_dynamic_bounds(&[0.7; 30]).unwrap();
        assert_eq!(c, (0.7, 0.7));
        assert!(TokenizerConfig::dynamic(16).with_bounds(c).is_err());
        assert!(fit_dynamic_bounds(&[1.0; 19]).is_err());
        let sym: Vec<f64> = (-50..=50).map(f64::from).collect();
        let (lo, hi) = fit_dynamic_bounds(&sym).unwrap();
        assert!((lo + hi).abs() < 1e-12);
        assert!(TokenizerConfig::dynamic(16).range().is_err());
    }

    #[test]
    fn point_and_direction_examples() {
        assert_eq!(point_and_direction(&[0.01, -0.01]).unwrap(), (0.0, 0.5));
        assert_eq!(point_and_direction(&[0.02; 3]).unwrap(), (0.02, 1.0));
        let (m, u) = point_and_direction(&[0.03, 0.01, -0.02, -0.02]).unwrap();
        assert!(m.abs() < 1e-15);
        assert_eq!(u, 0.5);
    }

    proptest! {
        #[test]
        fn round_trip_within_half_bin(x in -45.0f64..45.0, b in prop::sample::select(vec![2usize, 4, 256])) {
            let c = TokenizerConfig::static_range(b);
            let t = c.quantize(x).unwrap();
            prop_assert!((1..=b).contains(&t));
            let back = c.dequantize(t, 1.0).unwrap();
            prop_assert!((back - x.clamp(-15.0, 15.0)).abs() <= c.bin_width().unwrap() / 2.0 + 1e-12);
        }

        #[test]
        fn tokens_are_scale_free(xs in prop::collection::vec(-1.0f64..1.0, 1..40), alpha in 0.01f64..100.0, e in -20i32..20) {
            let c = TokenizerConfig::static_range(64);
            let a = tokenize(&xs, &c).unwrap();
            let w = c.bin_width().unwrap();
            let (_, scaled) = mean_scale(&xs).unwrap();
            for factor in [alpha, 2f64.powi(e)] {
                let b = tokenize(&xs.iter().map(|v| v * factor).collect::<Vec<_>>(), &c).unwrap();
                for ((p, q), x) in a.tokens.iter().zip(&b.tokens).zip(&scaled) {
                    // Distance to the nearest bin edge in scaled units.
                    let frac = ((x + 15.0) / w + 0.5).fract();
                    let near_edge = frac.min(1.0 - frac) * w < 1e-9;
                    prop_assert!(p == q || (near_edge && factor != 2f64.powi(e)));
                }
            }
        }
    }
}
