//! Shared scalar statistics helpers: batch standard errors, medians,
//! quartiles, least-squares slopes.

/// Standard error of the mean estimated from `batches` equal-size batches.
///
/// Trailing samples that do not fill a whole batch are dropped. Falls back
/// to the plain SE formula when there are fewer samples than batches.
pub fn batch_stderr(samples: &[f64], batches: usize) -> f64 {
    let n = samples.len();
    if n < 2 {
        return f64::NAN;
    }
    let per = n / batches;
    if per < 1 {
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        return (var / n as f64).sqrt();
    }
    let means: Vec<f64> = (0..batches)
        .map(|b| samples[b * per..(b + 1) * per].iter().sum::<f64>() / per as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (batches as f64 - 1.0);
    (var / batches as f64).sqrt()
}

/// Mean of a slice.
pub fn mean(samples: &[f64]) -> f64 {
    samples.iter().sum::<f64>() / samples.len() as f64
}

/// Linear interpolation quantile on a copy of the data (q in [0, 1]).
pub fn quantile(samples: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = samples.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    quantile_sorted(&v, q)
}

/// Quantile of already-sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = pos - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

pub fn median(samples: &[f64]) -> f64 {
    quantile(samples, 0.5)
}

/// Ordinary least-squares slope and intercept of `y` against `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> (f64, f64) {
    assert_eq!(x.len(), y.len());
    let mx = mean(x);
    let my = mean(y);
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        sxx += (xi - mx) * (xi - mx);
        sxy += (xi - mx) * (yi - my);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// One-sided sign-test p-value for "the sequence decreases": probability of
/// observing at least `decreases` decreases among `trials` fair coin flips.
pub fn sign_test_p_decreasing(decreases: usize, trials: usize) -> f64 {
    // Exact binomial tail at p = 1/2.
    let mut p = 0.0;
    for k in decreases..=trials {
        p += binomial_pmf_half(k, trials);
    }
    p.min(1.0)
}

fn binomial_pmf_half(k: usize, n: usize) -> f64 {
    // ln C(n, k) - n ln 2, summed in log space for robustness.
    let ln_c = ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k);
    (ln_c - n as f64 * std::f64::consts::LN_2).exp()
}

fn ln_factorial(n: usize) -> f64 {
    statrs::function::gamma::ln_gamma(n as f64 + 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quantiles_and_median() {
        let v = [3.0, 1.0, 2.0, 4.0];
        assert_relative_eq!(median(&v), 2.5);
        assert_relative_eq!(quantile(&v, 0.0), 1.0);
        assert_relative_eq!(quantile(&v, 1.0), 4.0);
        assert_relative_eq!(quantile(&v, 0.25), 1.75);
    }

    #[test]
    fn batch_se_shrinks_with_sample_size() {
        let small: Vec<f64> = (0..200).map(|i| (i % 7) as f64).collect();
        let large: Vec<f64> = (0..20_000).map(|i| (i % 7) as f64).collect();
        assert!(batch_stderr(&large, 100) < batch_stderr(&small, 100));
    }

    #[test]
    fn ols_recovers_exact_line() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v - 3.0).collect();
        let (slope, intercept) = ols_slope(&x, &y);
        assert_relative_eq!(slope, 2.0, epsilon = 1e-12);
        assert_relative_eq!(intercept, -3.0, epsilon = 1e-12);
    }

    #[test]
    fn sign_test_tail() {
        // 10 decreases out of 10: p = 2^-10.
        assert_relative_eq!(sign_test_p_decreasing(10, 10), 2f64.powi(-10), epsilon = 1e-12);
        // Zero decreases: p = 1.
        assert_relative_eq!(sign_test_p_decreasing(0, 10), 1.0, epsilon = 1e-9);
    }
}
