//! Small descriptive-statistics helpers shared across modules.

/// Arithmetic mean; `None` for an empty slice.
pub fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

/// Sample variance with the n-1 denominator; `None` below two observations.
pub fn sample_var(xs: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let m = mean(xs)?;
    Some(xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64)
}

pub fn sample_sd(xs: &[f64]) -> Option<f64> {
    sample_var(xs).map(f64::sqrt)
}

/// Percentile with linear interpolation between order statistics
/// (position `p/100 * (n-1)` in the sorted sample). `p` in [0, 100].
pub fn percentile_linear(sorted: &[f64], p: f64) -> Option<f64> {
    let n = sorted.len();
    if n == 0 {
        return None;
    }
    let pos = (p / 100.0).clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Some(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

/// Sorts a copy with a total order (NaNs last).
pub fn sorted_copy(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

/// Median; even-length samples average the two central values.
pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let s = sorted_copy(xs);
    let n = s.len();
    if n % 2 == 1 {
        Some(s[n / 2])
    } else {
        Some(0.5 * (s[n / 2 - 1] + s[n / 2]))
    }
}

fn central_moments(xs: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for x in xs {
        let d = x - m;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    (m2 / n, m3 / n, m4 / n)
}

/// Adjusted Fisher-Pearson sample skewness (G1). Needs n >= 3 and nonzero spread.
pub fn skewness(xs: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 3 {
        return None;
    }
    let (m2, m3, _) = central_moments(xs);
    if m2 <= 0.0 {
        return None;
    }
    let g1 = m3 / m2.powf(1.5);
    let nf = n as f64;
    Some(g1 * (nf * (nf - 1.0)).sqrt() / (nf - 2.0))
}

/// Sample excess kurtosis (G2, bias-adjusted). Needs n >= 4 and nonzero spread.
pub fn excess_kurtosis(xs: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 4 {
        return None;
    }
    let (m2, _, m4) = central_moments(xs);
    if m2 <= 0.0 {
        return None;
    }
    let g2 = m4 / (m2 * m2) - 3.0;
    let nf = n as f64;
    Some(((nf + 1.0) * g2 + 6.0) * (nf - 1.0) / ((nf - 2.0) * (nf - 3.0)))
}

/// Sample autocorrelation at `lag` (biased denominator, as in most textbooks).
pub fn autocorrelation(xs: &[f64], lag: usize) -> Option<f64> {
    if lag >= xs.len() {
        return None;
    }
    let m = mean(xs)?;
    let denom: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    if denom == 0.0 {
        return None;
    }
    let num: f64 = (lag..xs.len()).map(|t| (xs[t] - m) * (xs[t - lag] - m)).sum();
    Some(num / denom)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_matches_linear_definition() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert!((percentile_linear(&v, 5.0).unwrap() - 5.95).abs() < 1e-12);
        assert!((percentile_linear(&v, 95.0).unwrap() - 95.05).abs() < 1e-12);
        assert_eq!(percentile_linear(&[3.0], 50.0), Some(3.0));
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[0.01, 0.03]), Some(0.02));
        assert_eq!(median(&[5.0, 1.0, 3.0]), Some(3.0));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn moments_of_symmetric_sample() {
        let xs = [-2.0, -1.0, 0.0, 1.0, 2.0];
        assert!(skewness(&xs).unwrap().abs() < 1e-12);
        // G2 for a discrete uniform of five points
        let k = excess_kurtosis(&xs).unwrap();
        assert!((k - (-1.2)).abs() < 1e-12, "{k}");
    }
}
