//! Fully self-consuming Gaussian dynamics and collapse-rate estimation.
//!
//! The recursion alternates a sampling step `x = mu_t + sqrt(cov_t) z` with
//! the closed-form learning step (sample mean, unbiased covariance). Run in
//! isolation it contracts: the expected covariance square root shrinks by a
//! factor `alpha(n) < 1` per step, where `n` is the per-step sample count.
//! `alpha` has a log-gamma closed form in 1-D and is estimated by Monte
//! Carlo over scatter-matrix square roots in higher dimensions.

use crate::models::{fit_gaussian, sample_gaussian, GaussianParams};
use crate::rng::{substream, Purpose};
use crate::stats::batch_stderr;
use crate::{linalg, Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::function::gamma::ln_gamma;

/// One recorded state of the self-consuming recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct CollapseStep {
    pub t: usize,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub sqrt_cov: DMatrix<f64>,
    pub log_det_cov: f64,
}

/// Full trajectory of the recursion, step 0 being the initialization.
#[derive(Debug, Clone, PartialEq)]
pub struct CollapseTrajectory {
    pub steps: Vec<CollapseStep>,
    pub seed: u64,
    /// Samples drawn per step.
    pub n: usize,
}

/// How a collapse rate was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateEstimator {
    Analytic1D,
    MonteCarloWishart,
}

/// The per-step contraction factor `alpha(n)` of `E[sqrt(cov_t)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CollapseRate {
    pub n: usize,
    pub alpha: f64,
    pub estimator: RateEstimator,
    pub mc_samples: Option<usize>,
    pub mc_stderr: Option<f64>,
}

fn record(t: usize, params: &GaussianParams) -> CollapseStep {
    let sqrt_cov = params.sqrt_cov();
    let log_det_cov = params
        .cov()
        .clone()
        .cholesky()
        .map(|c| {
            2.0 * (0..params.dim())
                .map(|i| c.l_dirty()[(i, i)].ln())
                .sum::<f64>()
        })
        .unwrap_or(f64::NEG_INFINITY);
    CollapseStep {
        t,
        mean: params.mean().clone(),
        cov: params.cov().clone(),
        sqrt_cov,
        log_det_cov,
    }
}

/// One self-consuming update: draw `n` samples from `current`, refit.
///
/// This is the exact code path the retraining loop uses in fully-synthetic
/// Gaussian mode, which keeps the two modules bitwise comparable.
pub fn self_consuming_step(
    current: &GaussianParams,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<GaussianParams> {
    let synthetic = sample_gaussian(current, n, rng);
    fit_gaussian(&synthetic)
}

/// Runs the recursion for `t_max` steps from `init`, drawing `n` samples per
/// step from the substream `(seed, t, TrainSample)`.
pub fn run_self_consuming_gaussian(
    init: &GaussianParams,
    n: usize,
    t_max: usize,
    seed: u64,
) -> Result<CollapseTrajectory> {
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "self-consuming recursion needs n >= 2 samples per step, got {n}"
        )));
    }
    let mut steps = Vec::with_capacity(t_max + 1);
    steps.push(record(0, init));
    let mut current = init.clone();
    for t in 1..=t_max {
        let mut rng = substream(seed, t as u64, Purpose::TrainSample);
        current = self_consuming_step(&current, n, &mut rng)?;
        steps.push(record(t, &current));
    }
    Ok(CollapseTrajectory { steps, seed, n })
}

/// Analytic 1-D collapse rate via log-gamma:
/// `alpha(n) = sqrt(2 / (n-1)) * Gamma(n/2) / Gamma((n-1)/2)`.
///
/// Log-gamma differences keep this finite for large `n`, where raw gamma
/// ratios overflow near `n ~ 340`.
pub fn collapse_rate_1d(n: usize) -> Result<CollapseRate> {
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "collapse rate needs n >= 2, got {n}"
        )));
    }
    let nf = n as f64;
    let log_alpha =
        0.5 * (2.0f64.ln() - (nf - 1.0).ln()) + ln_gamma(nf / 2.0) - ln_gamma((nf - 1.0) / 2.0);
    let alpha = log_alpha.exp();
    debug_assert!(alpha > 0.0 && alpha < 1.0);
    Ok(CollapseRate {
        n,
        alpha,
        estimator: RateEstimator::Analytic1D,
        mc_samples: None,
        mc_stderr: None,
    })
}

/// Centered scatter matrix of `n` standard-normal `d`-vectors, with the
/// empirical mean recomputed inside the draw.
fn scatter_matrix(n: usize, d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut z: DMatrix<f64> = DMatrix::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            z[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (j, m) in mean.iter_mut().enumerate() {
            *m += z[(i, j)];
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut s = DMatrix::zeros(d, d);
    for i in 0..n {
        for a in 0..d {
            let ca = z[(i, a)] - mean[a];
            for b in a..d {
                s[(a, b)] += ca * (z[(i, b)] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in (a + 1)..d {
            s[(b, a)] = s[(a, b)];
        }
    }
    s
}

/// Monte Carlo estimate of the multivariate rate
/// `alpha = lambda_max(E[sqrt(S)]) / sqrt(n-1)`.
///
/// `S` is built exactly as the centered scatter of `n` standard normals
/// rather than through a Wishart(n-1) shortcut, so the Cochran-theorem
/// reduction is something tests can check instead of an assumption. The
/// standard error comes from 100 batch means of the top eigenvalue.
pub fn collapse_rate_multivariate(
    n: usize,
    d: usize,
    mc_samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<CollapseRate> {
    if n <= d {
        return Err(Error::InvalidInput(format!(
            "scatter matrix is singular for n = {n} <= d = {d}"
        )));
    }
    if mc_samples < 1_000 {
        return Err(Error::InvalidInput(format!(
            "need at least 1000 Monte Carlo draws, got {mc_samples}"
        )));
    }
    let batches = 100;
    let per_batch = mc_samples / batches;
    let scale = 1.0 / (n as f64 - 1.0).sqrt();

    let mut total = DMatrix::zeros(d, d);
    let mut batch_alphas = Vec::with_capacity(batches);
    let mut drawn = 0usize;
    for _ in 0..batches {
        let mut batch_sum = DMatrix::zeros(d, d);
        for _ in 0..per_batch {
            batch_sum += linalg::sym_sqrt(&scatter_matrix(n, d, rng));
        }
        drawn += per_batch;
        batch_alphas.push(linalg::max_eigenvalue(&(&batch_sum / per_batch as f64)) * scale);
        total += batch_sum;
    }
    let mean_sqrt = total / drawn as f64;
    let alpha = linalg::max_eigenvalue(&mean_sqrt) * scale;
    let stderr = batch_stderr(&batch_alphas, batches);
    Ok(CollapseRate {
        n,
        alpha,
        estimator: RateEstimator::MonteCarloWishart,
        mc_samples: Some(drawn),
        mc_stderr: Some(stderr),
    })
}

/// Estimate of `E[sqrt(S)]` itself with per-entry standard errors, exposed
/// for the isotropy diagnostics: off-diagonals should vanish within Monte
/// Carlo error.
pub fn mean_sqrt_scatter(
    n: usize,
    d: usize,
    mc_samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if n <= d {
        return Err(Error::InvalidInput(format!(
            "scatter matrix is singular for n = {n} <= d = {d}"
        )));
    }
    let mut sum: DMatrix<f64> = DMatrix::zeros(d, d);
    let mut sumsq: DMatrix<f64> = DMatrix::zeros(d, d);
    for _ in 0..mc_samples {
        let r = linalg::sym_sqrt(&scatter_matrix(n, d, rng));
        for a in 0..d {
            for b in 0..d {
                sum[(a, b)] += r[(a, b)];
                sumsq[(a, b)] += r[(a, b)] * r[(a, b)];
            }
        }
    }
    let mean = &sum / mc_samples as f64;
    let mut stderr = DMatrix::zeros(d, d);
    for a in 0..d {
        for b in 0..d {
            let var = (sumsq[(a, b)] - sum[(a, b)] * sum[(a, b)] / mc_samples as f64)
                / (mc_samples as f64 - 1.0);
            stderr[(a, b)] = (var.max(0.0) / mc_samples as f64).sqrt();
        }
    }
    Ok((mean, stderr))
}

/// Loewner upper envelope `alpha^t * sqrt(cov_0)` for the expected
/// covariance root.
pub fn expected_sqrt_cov_envelope(
    init: &GaussianParams,
    rate: &CollapseRate,
    t: usize,
) -> DMatrix<f64> {
    init.sqrt_cov() * rate.alpha.powi(t as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;
    use approx::assert_relative_eq;

    const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

    #[test]
    fn analytic_rate_reference_points() {
        // n = 2: alpha = sqrt(2/pi), the half-normal mean.
        let r = collapse_rate_1d(2).unwrap();
        assert_relative_eq!(r.alpha, SQRT_2_OVER_PI, epsilon = 1e-12);

        // Large n: alpha approaches 1 from below.
        let r = collapse_rate_1d(1_000_000).unwrap();
        assert!(r.alpha < 1.0);
        assert!(1.0 - r.alpha < 1e-5, "1 - alpha = {:e}", 1.0 - r.alpha);

        assert!(collapse_rate_1d(1).is_err());
    }

    #[test]
    fn analytic_rate_matches_chi_monte_carlo() {
        // Independent oracle: mean of sqrt(chi^2_{n-1}) / sqrt(n-1) from raw
        // normal draws, n = 10.
        let n = 10;
        let draws = 1_000_000;
        let mut rng = substream(1234, 0, Purpose::MonteCarlo);
        let mut samples = Vec::with_capacity(draws);
        for _ in 0..draws {
            let s: f64 = (0..n - 1)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    z * z
                })
                .sum();
            samples.push(s.sqrt() / ((n - 1) as f64).sqrt());
        }
        let mc = stats::mean(&samples);
        let se = batch_stderr(&samples, 100);
        let analytic = collapse_rate_1d(n).unwrap().alpha;
        assert!(
            (mc - analytic).abs() < 3.0 * se,
            "mc {mc} vs analytic {analytic} (3se {})",
            3.0 * se
        );
    }

    #[test]
    fn alpha_is_strictly_increasing_in_n() {
        let mut prev = 0.0;
        for n in 2..=100 {
            let a = collapse_rate_1d(n).unwrap().alpha;
            assert!(a > prev, "alpha({n}) = {a} <= alpha({}) = {prev}", n - 1);
            assert!(a < 1.0);
            prev = a;
        }
    }

    #[test]
    fn one_step_mean_sigma_matches_half_normal() {
        // n = 2, 1-D: sigma_1 = |N(0,1)| in distribution, so the seed-mean
        // of sigma_1 approaches sqrt(2/pi).
        let init = GaussianParams::standard(1);
        let seeds = 10_000u64;
        let mut sigmas = Vec::with_capacity(seeds as usize);
        for seed in 0..seeds {
            let traj = run_self_consuming_gaussian(&init, 2, 1, seed).unwrap();
            sigmas.push(traj.steps[1].cov[(0, 0)].sqrt());
        }
        let m = stats::mean(&sigmas);
        let se = batch_stderr(&sigmas, 100);
        assert!(
            (m - SQRT_2_OVER_PI).abs() < 3.0 * se,
            "mean sigma_1 {m}, want {SQRT_2_OVER_PI} within {}",
            3.0 * se
        );
    }

    #[test]
    fn variance_is_a_martingale() {
        // Unbiased covariance keeps E[sigma_t^2] at sigma_0^2.
        let init = GaussianParams::standard(1);
        let t_max = 6;
        let seeds = 4_000u64;
        let mut per_t: Vec<Vec<f64>> = vec![Vec::new(); t_max + 1];
        for seed in 0..seeds {
            let traj = run_self_consuming_gaussian(&init, 10, t_max, seed).unwrap();
            for (t, step) in traj.steps.iter().enumerate() {
                per_t[t].push(step.cov[(0, 0)]);
            }
        }
        for (t, samples) in per_t.iter().enumerate().skip(1) {
            let m = stats::mean(samples);
            let se = batch_stderr(samples, 100);
            assert!(
                (m - 1.0).abs() < 3.0 * se,
                "t = {t}: mean sigma^2 = {m}, 3se = {}",
                3.0 * se
            );
        }
    }

    #[test]
    fn trajectories_are_deterministic() {
        let init = GaussianParams::standard(2);
        let a = run_self_consuming_gaussian(&init, 12, 8, 99).unwrap();
        let b = run_self_consuming_gaussian(&init, 12, 8, 99).unwrap();
        assert_eq!(a, b);
        let c = run_self_consuming_gaussian(&init, 12, 8, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn median_log_sigma_drifts_down() {
        // Almost-sure collapse proxy: the median of log sigma_t falls
        // roughly linearly; sign test on consecutive medians at p < 0.01.
        let init = GaussianParams::standard(1);
        let t_max = 20;
        let seeds = 400u64;
        let mut per_t: Vec<Vec<f64>> = vec![Vec::new(); t_max + 1];
        for seed in 0..seeds {
            let traj = run_self_consuming_gaussian(&init, 5, t_max, seed).unwrap();
            for (t, step) in traj.steps.iter().enumerate() {
                per_t[t].push(0.5 * step.cov[(0, 0)].ln());
            }
        }
        let medians: Vec<f64> = per_t.iter().map(|v| stats::median(v)).collect();
        let decreases = medians.windows(2).filter(|w| w[1] < w[0]).count();
        let p = stats::sign_test_p_decreasing(decreases, t_max);
        assert!(p < 0.01, "sign test p = {p} ({decreases}/{t_max} decreases)");
        let ts: Vec<f64> = (0..=t_max).map(|t| t as f64).collect();
        let (slope, _) = stats::ols_slope(&ts, &medians);
        assert!(slope < 0.0, "median log sigma slope {slope}");
    }

    #[test]
    fn multivariate_rate_reduces_to_1d() {
        let mut rng = substream(7, 0, Purpose::MonteCarlo);
        let mc = collapse_rate_multivariate(10, 1, 100_000, &mut rng).unwrap();
        let analytic = collapse_rate_1d(10).unwrap();
        let se = mc.mc_stderr.unwrap();
        assert!(
            (mc.alpha - analytic.alpha).abs() < 3.0 * se,
            "mc {} vs analytic {} (3se {})",
            mc.alpha,
            analytic.alpha,
            3.0 * se
        );
    }

    #[test]
    fn mean_sqrt_scatter_is_isotropic() {
        let mut rng = substream(8, 0, Purpose::MonteCarlo);
        let (mean, stderr) = mean_sqrt_scatter(12, 2, 50_000, &mut rng).unwrap();
        assert!(mean[(0, 1)].abs() < 3.0 * stderr[(0, 1)]);
        // Diagonal entries agree with each other by symmetry.
        assert!((mean[(0, 0)] - mean[(1, 1)]).abs() < 3.0 * (stderr[(0, 0)] + stderr[(1, 1)]));
    }

    #[test]
    fn multivariate_alpha_below_one() {
        for (n, d) in [(5usize, 2usize), (20, 2), (50, 3)] {
            let mut rng = substream(n as u64 * 31 + d as u64, 0, Purpose::MonteCarlo);
            let rate = collapse_rate_multivariate(n, d, 20_000, &mut rng).unwrap();
            assert!(
                rate.alpha < 1.0,
                "alpha({n}, {d}) = {} not below 1",
                rate.alpha
            );
            assert!(rate.alpha > 0.0);
        }
    }

    #[test]
    fn envelope_shape() {
        let init = GaussianParams::new(
            DVector::from_vec(vec![0.0]),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        let rate = collapse_rate_1d(10).unwrap();
        let e0 = expected_sqrt_cov_envelope(&init, &rate, 0);
        assert_relative_eq!(e0[(0, 0)], 1.0, epsilon = 1e-15);
        let e20 = expected_sqrt_cov_envelope(&init, &rate, 20);
        assert_relative_eq!(e20[(0, 0)], rate.alpha.powi(20), epsilon = 1e-15);
        // Monotonically Loewner-decreasing in t.
        let mut prev = f64::INFINITY;
        for t in 0..25 {
            let e = expected_sqrt_cov_envelope(&init, &rate, t)[(0, 0)];
            assert!(e < prev);
            prev = e;
        }
    }
}
