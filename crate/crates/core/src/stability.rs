//! Stability analysis around the optimum: log-density gradients and
//! Hessians in flattened parameter coordinates, the Jacobian of the
//! population retraining operator, certificate arithmetic, misspecification
//! estimation, and the finite-sample plateau measurement.
//!
//! Parametrization: all derivatives are taken with respect to the canonical
//! flattening of [`ModelParams`] — `(mean, upper-triangular covariance)`
//! per Gaussian block, mixture weights as free logits. Analytic results are
//! validated against central finite differences rather than any printed
//! block formulas.

use crate::metrics;
use crate::models::{gaussian_log_density, Dataset, GaussianParams, Model, ModelParams};
use crate::retrain::{
    infinite_sample_gaussian_operator, iterate_population_operator, run_iterative_retraining,
    Mixing, RetrainConfig,
};
use crate::rng::{substream, Purpose};
use crate::stats;
use crate::{linalg, Error, Result};
use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;

/// Default finite-difference step; scaled per coordinate by magnitude.
pub const DEFAULT_FD_STEP: f64 = 1e-4;
/// Power-iteration tolerance and cap for spectral norms.
pub const SPECTRAL_TOL: f64 = 1e-10;
pub const SPECTRAL_MAX_ITERS: usize = 10_000;

/// The two curvature matrices of the mixed objective at the optimum:
/// `a` averages the log-density Hessian under the data distribution,
/// `b` under the model itself.
#[derive(Debug, Clone)]
pub struct HessianPair {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Per-entry batch standard errors of `a` and `b`.
    pub a_stderr: DMatrix<f64>,
    pub b_stderr: DMatrix<f64>,
    pub p: usize,
    pub mc_samples: usize,
    pub fd_step: f64,
}

/// The quantities of the stability certificate.
#[derive(Debug, Clone)]
pub struct StabilityCertificate {
    /// Strong-concavity constant `-lambda_max(A)`; certificate is invalid
    /// unless positive.
    pub alpha: f64,
    pub l_const: f64,
    pub epsilon: f64,
    pub lambda: f64,
    /// `lambda (alpha + eps L) / (alpha - lambda (alpha + eps L))`, or
    /// infinity when the denominator is not positive.
    pub bound: f64,
    /// Measured spectral norm of the operator Jacobian.
    pub jac_norm: f64,
    /// `lambda (1 + L eps / alpha) < 1/2`.
    pub stable_condition: bool,
    /// False when `-A` failed to be positive definite.
    pub valid: bool,
}

/// One plateau grid point.
#[derive(Debug, Clone, Copy)]
pub struct PlateauEntry {
    pub n: usize,
    pub plateau: f64,
    pub stderr: f64,
}

/// Finite-sample plateau measurement across a grid of dataset sizes.
#[derive(Debug, Clone)]
pub struct PlateauReport {
    pub entries: Vec<PlateauEntry>,
    /// Fitted slope of `log plateau` against `log n`.
    pub loglog_slope: f64,
    /// Fitted geometric rate of the population transient; absent when
    /// `lambda = 0` (no retraining dynamics).
    pub rho_hat: Option<f64>,
    pub divergent_runs: usize,
}

/// Upper-triangular index pairs in the canonical flattening order.
fn upper_tri_pairs(d: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(d * (d + 1) / 2);
    for i in 0..d {
        for j in i..d {
            pairs.push((i, j));
        }
    }
    pairs
}

/// Symmetric basis matrix for covariance coordinate `(i, j)`.
fn sym_basis(d: usize, i: usize, j: usize) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(d, d);
    e[(i, j)] = 1.0;
    e[(j, i)] = 1.0;
    if i == j {
        e[(i, i)] = 1.0;
    }
    e
}

fn precision_of(g: &GaussianParams) -> Result<DMatrix<f64>> {
    g.cov()
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::NumericalFailure("covariance is not positive definite".into()))
}

/// Gradient of the Gaussian log-density with respect to the flattened
/// `(mean, upper-tri cov)` coordinates.
fn gaussian_grad(g: &GaussianParams, x: &[f64]) -> Result<DVector<f64>> {
    let d = g.dim();
    let precision = precision_of(g)?;
    let u = DVector::from_iterator(d, x.iter().zip(g.mean().iter()).map(|(xi, mi)| xi - mi));
    let pu = &precision * &u;
    let mut grad = Vec::with_capacity(d + d * (d + 1) / 2);
    grad.extend(pu.iter());
    // d log p / d Sigma = (P u u^T P - P) / 2 as a symmetric matrix; the
    // shared off-diagonal storage doubles those coordinates.
    let gmat = (&pu * pu.transpose() - &precision) * 0.5;
    for (i, j) in upper_tri_pairs(d) {
        grad.push(if i == j { gmat[(i, i)] } else { 2.0 * gmat[(i, j)] });
    }
    Ok(DVector::from_vec(grad))
}

fn gmm_responsibilities(g: &crate::models::GmmParams, x: &[f64]) -> Result<Vec<f64>> {
    let mut logs = Vec::with_capacity(g.num_components());
    for (w, c) in g.weights().iter().zip(g.components()) {
        logs.push(w.max(f64::MIN_POSITIVE).ln() + gaussian_log_density(c, x)?);
    }
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut exps: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    for e in exps.iter_mut() {
        *e /= total;
    }
    Ok(exps)
}

/// Gradient of the model log-density with respect to its flattened
/// parameter vector.
pub fn log_density_grad(model: &Model, x: &[f64]) -> Result<DVector<f64>> {
    match model {
        Model::Gaussian(g) => gaussian_grad(g, x),
        Model::Gmm(g) => {
            let k = g.num_components();
            let r = gmm_responsibilities(g, x)?;
            let p = model.to_params().len();
            let mut grad = DVector::zeros(p);
            // Logit coordinates: responsibility minus weight.
            for l in 0..k - 1 {
                grad[l] = r[l] - g.weights()[l];
            }
            let block = g.dim() + g.dim() * (g.dim() + 1) / 2;
            for (kk, comp) in g.components().iter().enumerate() {
                let cg = gaussian_grad(comp, x)?;
                let offset = (k - 1) + kk * block;
                for (idx, v) in cg.iter().enumerate() {
                    grad[offset + idx] = r[kk] * v;
                }
            }
            Ok(grad)
        }
    }
}

/// Analytic Hessian of the Gaussian log-density with respect to the
/// flattened `(mean, upper-tri cov)` coordinates, derived symbolically:
///
/// * mean-mean block: `-P`;
/// * mean-cov cross: `-P E_kl P u`;
/// * cov-cov block: `tr(P E_kl P E_ij) / 2 - u^T P E_kl P E_ij P u`;
///
/// with `P` the precision, `u = x - mean`, and `E_ij` the symmetric basis
/// matrix of coordinate `(i, j)`.
pub fn analytic_gaussian_hessian(g: &GaussianParams, x: &[f64]) -> Result<DMatrix<f64>> {
    let d = g.dim();
    if x.len() != d {
        return Err(Error::InvalidInput(format!(
            "point has dimension {} but model expects {d}",
            x.len()
        )));
    }
    let precision = precision_of(g)?;
    let u = DVector::from_iterator(d, x.iter().zip(g.mean().iter()).map(|(xi, mi)| xi - mi));
    let pu = &precision * &u;
    let pairs = upper_tri_pairs(d);
    let p_cov = pairs.len();
    let p = d + p_cov;
    let mut h = DMatrix::zeros(p, p);

    // Mean-mean block.
    for i in 0..d {
        for j in 0..d {
            h[(i, j)] = -precision[(i, j)];
        }
    }

    // Precompute P E_ab P and P E_ab P u per covariance coordinate.
    let mut pep: Vec<DMatrix<f64>> = Vec::with_capacity(p_cov);
    for &(i, j) in &pairs {
        let e = sym_basis(d, i, j);
        pep.push(&precision * e * &precision);
    }

    // Mean-cov cross blocks.
    for (c, pe) in pep.iter().enumerate() {
        let col = pe * &u;
        for r in 0..d {
            h[(r, d + c)] = -col[r];
            h[(d + c, r)] = -col[r];
        }
    }

    // Cov-cov block: 0.5 tr(P E_b P E_a) - u^T P E_b P E_a P u, using
    // pep[b] = P E_b P and ea_pu = E_a P u.
    for (ca, &(ia, ja)) in pairs.iter().enumerate() {
        let ea = sym_basis(d, ia, ja);
        let ea_pu = &ea * &pu;
        for (cb, pe_b) in pep.iter().enumerate() {
            let tr = if ia == ja {
                pe_b[(ia, ia)]
            } else {
                pe_b[(ia, ja)] + pe_b[(ja, ia)]
            };
            let quad = u.dot(&(pe_b * &ea_pu));
            h[(d + ca, d + cb)] = 0.5 * tr - quad;
        }
    }

    linalg::symmetrize(&mut h);
    Ok(h)
}

/// Central finite difference of the log-density gradient at `theta`,
/// per-coordinate steps scaled by magnitude. This is the per-sample Hessian
/// estimator used by [`estimate_hessians`].
fn fd_hessian_of_grad(
    plus: &[Model],
    minus: &[Model],
    steps: &[f64],
    x: &[f64],
) -> Result<DMatrix<f64>> {
    let p = steps.len();
    let mut h = DMatrix::zeros(p, p);
    for j in 0..p {
        let gp = log_density_grad(&plus[j], x)?;
        let gm = log_density_grad(&minus[j], x)?;
        for i in 0..p {
            h[(i, j)] = (gp[i] - gm[i]) / (2.0 * steps[j]);
        }
    }
    Ok(h)
}

/// Builds the per-coordinate perturbed models used by the FD Hessian.
fn perturbed_models(params: &ModelParams, fd_step: f64) -> Result<(Vec<Model>, Vec<Model>, Vec<f64>)> {
    let p = params.len();
    let mut plus = Vec::with_capacity(p);
    let mut minus = Vec::with_capacity(p);
    let mut steps = Vec::with_capacity(p);
    for j in 0..p {
        let h = fd_step * params.theta()[j].abs().max(1.0);
        let mut tp = params.theta().clone();
        tp[j] += h;
        let mut tm = params.theta().clone();
        tm[j] -= h;
        plus.push(Model::from_params(&params.with_theta(tp)?)?);
        minus.push(Model::from_params(&params.with_theta(tm)?)?);
        steps.push(h);
    }
    Ok((plus, minus, steps))
}

/// Monte Carlo estimate of the curvature pair: `a` under draws from
/// `data`, `b` under draws from `model` itself, each the average of
/// per-sample finite-difference Hessians of the log-density gradient.
pub fn estimate_hessians(
    model: &Model,
    data: &Model,
    mc_samples: usize,
    fd_step: f64,
    rng: &mut ChaCha8Rng,
) -> Result<HessianPair> {
    if fd_step <= 0.0 {
        return Err(Error::InvalidInput("fd_step must be positive".into()));
    }
    if mc_samples < 1_000 {
        return Err(Error::InvalidInput(format!(
            "need at least 1000 Monte Carlo samples, got {mc_samples}"
        )));
    }
    let params = model.to_params();
    let p = params.len();
    let (plus, minus, steps) = perturbed_models(&params, fd_step)?;

    let batches = 100;
    let per_batch = (mc_samples / batches).max(1);
    let estimate = |source: &Model, rng: &mut ChaCha8Rng| -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let mut total = DMatrix::zeros(p, p);
        let mut batch_means: Vec<DMatrix<f64>> = Vec::with_capacity(batches);
        for _ in 0..batches {
            let chunk = source.sample(per_batch, rng);
            let mut batch_sum = DMatrix::zeros(p, p);
            for x in chunk.iter() {
                let h = fd_hessian_of_grad(&plus, &minus, &steps, x)?;
                if let Some(pos) = h.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NumericalFailure(format!(
                        "non-finite Hessian entry at coordinate ({}, {})",
                        pos % p,
                        pos / p
                    )));
                }
                batch_sum += h;
            }
            batch_means.push(&batch_sum / per_batch as f64);
            total += batch_sum;
        }
        let mut mean = total / (batches * per_batch) as f64;
        linalg::symmetrize(&mut mean);
        let mut stderr = DMatrix::zeros(p, p);
        for i in 0..p {
            for j in 0..p {
                let vals: Vec<f64> = batch_means.iter().map(|m| m[(i, j)]).collect();
                stderr[(i, j)] = stats::batch_stderr(&vals, batches) ;
            }
        }
        Ok((mean, stderr))
    };

    let (a, a_stderr) = estimate(data, rng)?;
    let (b, b_stderr) = estimate(model, rng)?;
    Ok(HessianPair {
        a,
        b,
        a_stderr,
        b_stderr,
        p,
        mc_samples: batches * per_batch,
        fd_step,
    })
}

/// Curvature pair with `a` averaged over the points of an empirical dataset
/// instead of fresh draws; `b` still averages over `mc_samples` model draws.
pub fn estimate_hessians_empirical(
    model: &Model,
    data: &Dataset,
    mc_samples: usize,
    fd_step: f64,
    rng: &mut ChaCha8Rng,
) -> Result<HessianPair> {
    if fd_step <= 0.0 {
        return Err(Error::InvalidInput("fd_step must be positive".into()));
    }
    if data.is_empty() {
        return Err(Error::InvalidInput("empty dataset".into()));
    }
    let params = model.to_params();
    let p = params.len();
    let (plus, minus, steps) = perturbed_models(&params, fd_step)?;

    let batches = 100usize;
    let mean_over = |points: &mut dyn Iterator<Item = &[f64]>,
                     count: usize|
     -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let per_batch = (count / batches).max(1);
        let mut total = DMatrix::zeros(p, p);
        let mut batch_means: Vec<DMatrix<f64>> = Vec::new();
        let mut batch_sum = DMatrix::zeros(p, p);
        let mut in_batch = 0usize;
        let mut used = 0usize;
        for x in points {
            batch_sum += fd_hessian_of_grad(&plus, &minus, &steps, x)?;
            in_batch += 1;
            used += 1;
            if in_batch == per_batch {
                batch_means.push(&batch_sum / per_batch as f64);
                total += std::mem::replace(&mut batch_sum, DMatrix::zeros(p, p));
                in_batch = 0;
            }
        }
        if in_batch > 0 {
            total += batch_sum;
        }
        let mut mean = total / used as f64;
        linalg::symmetrize(&mut mean);
        let mut stderr = DMatrix::zeros(p, p);
        for i in 0..p {
            for j in 0..p {
                let vals: Vec<f64> = batch_means.iter().map(|m| m[(i, j)]).collect();
                stderr[(i, j)] = stats::batch_stderr(&vals, batch_means.len().max(2));
            }
        }
        Ok((mean, stderr))
    };

    let (a, a_stderr) = mean_over(&mut data.iter(), data.len())?;
    let model_draws = model.sample(mc_samples.max(1_000), rng);
    let (b, b_stderr) = mean_over(&mut model_draws.iter(), model_draws.len())?;
    Ok(HessianPair {
        a,
        b,
        a_stderr,
        b_stderr,
        p,
        mc_samples: mc_samples.max(1_000),
        fd_step,
    })
}

/// Reparametrized common-random-numbers estimate of the cross Hessian of
/// the synthetic-data term: the derivative, with respect to the sampling
/// parameters, of the expected log-density gradient. Returns the estimate
/// and per-entry batch standard errors.
///
/// The identity under test elsewhere: at the optimum this equals minus the
/// same-parameter Hessian expectation.
pub fn estimate_cross_hessian_h2(
    theta_star: &GaussianParams,
    mc_samples: usize,
    fd_step: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let model = Model::Gaussian(theta_star.clone());
    let params = model.to_params();
    let p = params.len();
    let d = theta_star.dim();

    // Perturbed sampling parameters and their symmetric roots.
    let mut roots_plus = Vec::with_capacity(p);
    let mut roots_minus = Vec::with_capacity(p);
    let mut means_plus = Vec::with_capacity(p);
    let mut means_minus = Vec::with_capacity(p);
    let mut steps = Vec::with_capacity(p);
    for j in 0..p {
        let h = fd_step * params.theta()[j].abs().max(1.0);
        let mut tp = params.theta().clone();
        tp[j] += h;
        let mut tm = params.theta().clone();
        tm[j] -= h;
        let gp = match Model::from_params(&params.with_theta(tp)?)? {
            Model::Gaussian(g) => g,
            _ => unreachable!(),
        };
        let gm = match Model::from_params(&params.with_theta(tm)?)? {
            Model::Gaussian(g) => g,
            _ => unreachable!(),
        };
        roots_plus.push(gp.sqrt_cov());
        roots_minus.push(gm.sqrt_cov());
        means_plus.push(gp.mean().clone());
        means_minus.push(gm.mean().clone());
        steps.push(h);
    }

    let batches = 100;
    let per_batch = (mc_samples / batches).max(1);
    let mut total = DMatrix::zeros(p, p);
    let mut batch_means: Vec<DMatrix<f64>> = Vec::with_capacity(batches);
    let mut z = DVector::zeros(d);
    let mut xbuf = vec![0.0; d];
    for _ in 0..batches {
        let mut batch_sum = DMatrix::zeros(p, p);
        for _ in 0..per_batch {
            for zi in z.iter_mut() {
                *zi = rand::Rng::sample(rng, rand_distr::StandardNormal);
            }
            for j in 0..p {
                // Same z on both sides of the difference.
                let xp = &means_plus[j] + &roots_plus[j] * &z;
                for (b, v) in xbuf.iter_mut().zip(xp.iter()) {
                    *b = *v;
                }
                let gp = gaussian_grad(theta_star, &xbuf)?;
                let xm = &means_minus[j] + &roots_minus[j] * &z;
                for (b, v) in xbuf.iter_mut().zip(xm.iter()) {
                    *b = *v;
                }
                let gm = gaussian_grad(theta_star, &xbuf)?;
                for i in 0..p {
                    batch_sum[(i, j)] += (gp[i] - gm[i]) / (2.0 * steps[j]);
                }
            }
        }
        batch_means.push(&batch_sum / per_batch as f64);
        total += batch_sum;
    }
    let mean = total / (batches * per_batch) as f64;
    let mut stderr = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            let vals: Vec<f64> = batch_means.iter().map(|m| m[(i, j)]).collect();
            stderr[(i, j)] = stats::batch_stderr(&vals, batches);
        }
    }
    Ok((mean, stderr))
}

/// Finite-difference Jacobian of the closed-form Gaussian population
/// operator at `theta_star`, plus its spectral norm.
pub fn jacobian_population_operator(
    theta_star: &GaussianParams,
    data_dist: &GaussianParams,
    lambda: f64,
    fd_step: f64,
) -> Result<(DMatrix<f64>, f64)> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "lambda must be >= 0, got {lambda}"
        )));
    }
    let params = Model::Gaussian(theta_star.clone()).to_params();
    let p = params.len();
    let mut jac = DMatrix::zeros(p, p);
    for j in 0..p {
        let h = fd_step * params.theta()[j].abs().max(1.0);
        let mut tp = params.theta().clone();
        tp[j] += h;
        let mut tm = params.theta().clone();
        tm[j] -= h;
        let gp = match Model::from_params(&params.with_theta(tp)?)? {
            Model::Gaussian(g) => g,
            _ => unreachable!(),
        };
        let gm = match Model::from_params(&params.with_theta(tm)?)? {
            Model::Gaussian(g) => g,
            _ => unreachable!(),
        };
        let fp = Model::Gaussian(infinite_sample_gaussian_operator(&gp, data_dist, lambda)?)
            .to_params();
        let fm = Model::Gaussian(infinite_sample_gaussian_operator(&gm, data_dist, lambda)?)
            .to_params();
        for i in 0..p {
            jac[(i, j)] = (fp.theta()[i] - fm.theta()[i]) / (2.0 * h);
        }
    }
    let norm = linalg::spectral_norm(&jac, SPECTRAL_TOL, SPECTRAL_MAX_ITERS)?;
    Ok((jac, norm))
}

/// Jacobian reconstructed from the curvature pair via the compact formula
/// `(I + lambda A^{-1} B)^{-1} lambda A^{-1} B`, plus its spectral norm.
pub fn jacobian_from_hessians(h: &HessianPair, lambda: f64) -> Result<(DMatrix<f64>, f64)> {
    let a_inv = h
        .a
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::NumericalFailure("curvature matrix A is singular".into()))?;
    let m = a_inv * &h.b * lambda;
    let lhs = DMatrix::identity(h.p, h.p) + &m;
    let lhs_inv = lhs
        .try_inverse()
        .ok_or_else(|| Error::NumericalFailure("I + lambda A^-1 B is singular".into()))?;
    let jac = lhs_inv * m;
    let norm = linalg::spectral_norm(&jac, SPECTRAL_TOL, SPECTRAL_MAX_ITERS)?;
    Ok((jac, norm))
}

/// Assembles the stability certificate from its measured ingredients.
///
/// A non-positive strong-concavity constant marks the certificate invalid
/// rather than raising an error.
pub fn build_certificate(
    hessians: &HessianPair,
    epsilon: f64,
    l_const: f64,
    lambda: f64,
    jac_norm: f64,
) -> StabilityCertificate {
    let alpha = -linalg::max_eigenvalue(&hessians.a);
    let valid = alpha > 0.0;
    let (bound, stable_condition) = if valid {
        let amplified = lambda * (alpha + epsilon * l_const);
        let denom = alpha - amplified;
        let bound = if denom > 0.0 {
            amplified / denom
        } else {
            f64::INFINITY
        };
        let stable = lambda * (1.0 + l_const * epsilon / alpha) < 0.5;
        (bound, stable)
    } else {
        (f64::INFINITY, false)
    };
    StabilityCertificate {
        alpha,
        l_const,
        epsilon,
        lambda,
        bound,
        jac_norm,
        stable_condition,
        valid,
    }
}

/// Empirical misspecification: Wasserstein-1 distance between `budget`
/// model samples and the real dataset (exact sorted estimator in 1-D,
/// assignment-based above).
pub fn estimate_epsilon(
    model: &Model,
    real: &Dataset,
    budget: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if budget < 100 {
        return Err(Error::InvalidInput(format!(
            "epsilon budget must be >= 100, got {budget}"
        )));
    }
    let generated = model.sample(budget, rng);
    Ok(metrics::wasserstein1_capped(&generated, real, metrics::ASSIGNMENT_CAP)?.value)
}

/// Empirical Hessian-Lipschitz constant: the max over sampled pairs of
/// `||H(x) - H(x')||_2 / ||x - x'||_2`, with draws from the model law.
pub fn estimate_lipschitz(model: &Model, pairs: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    let params = model.to_params();
    let (plus, minus, steps) = perturbed_models(&params, DEFAULT_FD_STEP)?;
    let mut best = 0.0f64;
    let xs = model.sample(pairs, rng);
    let ys = model.sample(pairs, rng);
    for (x, y) in xs.iter().zip(ys.iter()) {
        let dx: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if dx < 1e-9 {
            continue;
        }
        let hx = match model {
            Model::Gaussian(g) => analytic_gaussian_hessian(g, x)?,
            _ => fd_hessian_of_grad(&plus, &minus, &steps, x)?,
        };
        let hy = match model {
            Model::Gaussian(g) => analytic_gaussian_hessian(g, y)?,
            _ => fd_hessian_of_grad(&plus, &minus, &steps, y)?,
        };
        let ratio = linalg::spectral_norm(&(hx - hy), 1e-8, SPECTRAL_MAX_ITERS)? / dx;
        best = best.max(ratio);
    }
    Ok(best)
}

/// Fits the geometric decay rate of the population transient from a
/// perturbed start; `None` when the iteration is already at the fixed
/// point or `lambda = 0`.
pub fn fit_population_rate(
    data_dist: &GaussianParams,
    lambda: f64,
    perturbation: f64,
    steps: usize,
) -> Result<Option<f64>> {
    if lambda == 0.0 {
        return Ok(None);
    }
    let star_flat = Model::Gaussian(data_dist.clone()).to_params();
    let p = star_flat.len();
    // Fixed deterministic perturbation direction.
    let dir = DVector::from_iterator(p, (0..p).map(|i| ((i as f64) * 0.7).cos()));
    let dir = dir.normalize();
    let theta0 = star_flat.with_theta(star_flat.theta() + dir * perturbation)?;
    let start = match Model::from_params(&theta0)? {
        Model::Gaussian(g) => g,
        _ => unreachable!(),
    };
    let iterates = iterate_population_operator(&start, data_dist, lambda, steps)?;
    let mut ts = Vec::new();
    let mut logs = Vec::new();
    for (t, it) in iterates.iter().enumerate() {
        let dist = (Model::Gaussian(it.clone()).to_params().theta() - star_flat.theta()).norm();
        if dist > 1e-12 {
            ts.push(t as f64);
            logs.push(dist.ln());
        }
    }
    if ts.len() < 3 {
        return Ok(None);
    }
    let (slope, _) = stats::ols_slope(&ts, &logs);
    Ok(Some(slope.exp()))
}

/// Runs finite-sample retraining across `n_grid` and `seeds`, measuring the
/// long-run distance plateau to `theta_star` and its scaling in `n`.
///
/// Plateau per `n`: median of `||theta_t - theta_star||` over the last
/// quarter of iterations and all seeds; stderr from per-seed medians. Runs
/// whose distance exceeds `1e3` times their first-iteration distance are
/// excluded and counted.
pub fn measure_plateau(
    template: &RetrainConfig,
    data_dist: &GaussianParams,
    n_grid: &[usize],
    seeds: &[u64],
    theta_star: &ModelParams,
) -> Result<PlateauReport> {
    if n_grid.len() < 2 || n_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput(
            "n_grid must be strictly increasing with at least 2 entries".into(),
        ));
    }
    if seeds.is_empty() {
        return Err(Error::InvalidInput("need at least one seed".into()));
    }
    let lambda = match template.mixing {
        Mixing::Ratio(l) => l,
        Mixing::FullySynthetic => {
            return Err(Error::InvalidInput(
                "plateau measurement needs a stable mixed configuration".into(),
            ))
        }
    };

    let mut entries = Vec::with_capacity(n_grid.len());
    let mut divergent = 0usize;
    for &n in n_grid {
        let mut all_samples: Vec<f64> = Vec::new();
        let mut seed_medians: Vec<f64> = Vec::new();
        for &seed in seeds {
            let mut data_rng = substream(seed, n as u64, Purpose::Dataset);
            let real = crate::models::sample_gaussian(data_dist, n, &mut data_rng);
            let mut config = template.clone();
            config.n_real = n;
            config.seed = seed;
            config.metric_set = Vec::new();
            config.reference_budget = n;
            let traj = run_iterative_retraining(&config, &real)?;
            let dists: Vec<f64> = traj
                .records
                .iter()
                .map(|r| (r.params.theta() - theta_star.theta()).norm())
                .collect();
            let scale = dists.get(1).copied().unwrap_or(0.0).max(1e-12);
            if dists.iter().any(|&d| d > 1e3 * scale) {
                divergent += 1;
                continue;
            }
            let start = (3 * traj.records.len()) / 4;
            let tail = &dists[start.max(1)..];
            all_samples.extend_from_slice(tail);
            seed_medians.push(stats::median(tail));
        }
        if all_samples.is_empty() {
            return Err(Error::NumericalFailure(format!(
                "all runs diverged at n = {n}"
            )));
        }
        let plateau = stats::median(&all_samples);
        let grand = stats::mean(&seed_medians);
        let var = seed_medians
            .iter()
            .map(|m| (m - grand).powi(2))
            .sum::<f64>()
            / (seed_medians.len().max(2) as f64 - 1.0);
        entries.push(PlateauEntry {
            n,
            plateau,
            stderr: (var / seed_medians.len() as f64).sqrt(),
        });
    }

    let log_n: Vec<f64> = entries.iter().map(|e| (e.n as f64).ln()).collect();
    let log_p: Vec<f64> = entries.iter().map(|e| e.plateau.ln()).collect();
    let (loglog_slope, _) = stats::ols_slope(&log_n, &log_p);
    let rho_hat = fit_population_rate(data_dist, lambda, 0.1, 25)?;

    Ok(PlateauReport {
        entries,
        loglog_slope,
        rho_hat,
        divergent_runs: divergent,
    })
}
