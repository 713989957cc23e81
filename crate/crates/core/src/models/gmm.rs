//! Gaussian mixture fitted by warm-started EM.

use super::gaussian::log_density_with_cholesky;
use super::{fit_gaussian, Dataset, GaussianParams, SourceTag};
use crate::{linalg, Error, Result, COV_FLOOR};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Absolute log-likelihood improvement below which EM stops.
pub const EM_TOL: f64 = 1e-8;
/// Hard cap on EM iterations.
pub const EM_MAX_ITERS: usize = 500;
// A component whose responsibility mass falls below this is re-seeded.
const EMPTY_MASS: f64 = 1e-10;

/// Mixture weights plus per-component Gaussian parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmParams {
    weights: Vec<f64>,
    components: Vec<GaussianParams>,
}

impl GmmParams {
    /// Validates: at least one component, weights nonnegative summing to 1
    /// within 1e-10, all components of equal dimension.
    pub fn new(weights: Vec<f64>, components: Vec<GaussianParams>) -> Result<Self> {
        if components.is_empty() || weights.len() != components.len() {
            return Err(Error::InvalidInput(format!(
                "{} weights vs {} components",
                weights.len(),
                components.len()
            )));
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidInput("mixture weights must be >= 0".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidInput(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        let d = components[0].dim();
        if components.iter().any(|c| c.dim() != d) {
            return Err(Error::InvalidInput(
                "mixture components have inconsistent dimensions".into(),
            ));
        }
        Ok(GmmParams {
            weights,
            components,
        })
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[GaussianParams] {
        &self.components
    }

    /// Mean of the mixture.
    pub fn mixture_mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.dim());
        for (w, c) in self.weights.iter().zip(&self.components) {
            m += c.mean() * *w;
        }
        m
    }

    /// Total covariance of the mixture (within plus between components).
    pub fn total_covariance(&self) -> DMatrix<f64> {
        let d = self.dim();
        let m = self.mixture_mean();
        let mut second = DMatrix::zeros(d, d);
        for (w, c) in self.weights.iter().zip(&self.components) {
            second += (c.cov() + c.mean() * c.mean().transpose()) * *w;
        }
        let mut cov = second - &m * m.transpose();
        linalg::symmetrize(&mut cov);
        cov
    }
}

/// Outcome of an EM fit: parameters plus convergence diagnostics.
#[derive(Debug, Clone)]
pub struct GmmFit {
    pub params: GmmParams,
    /// Total data log-likelihood after the final step.
    pub log_likelihood: f64,
    /// Per-EM-step log-likelihood trace (one entry per E-step).
    pub trace: Vec<f64>,
    pub iterations: usize,
    /// Number of empty-component re-seeds that occurred.
    pub reseeds: usize,
}

struct Workspace {
    chols: Vec<Cholesky<f64, Dyn>>,
    log_weights: Vec<f64>,
    resp: Vec<f64>, // n x k responsibilities, row-major
}

fn prepare(params: &GmmParams) -> Result<Workspace> {
    let chols = params
        .components
        .iter()
        .map(|c| {
            c.cov().clone().cholesky().ok_or_else(|| {
                Error::NumericalFailure("component covariance lost positive definiteness".into())
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let log_weights = params
        .weights
        .iter()
        .map(|&w| w.max(f64::MIN_POSITIVE).ln())
        .collect();
    Ok(Workspace {
        chols,
        log_weights,
        resp: Vec::new(),
    })
}

/// E-step: fills responsibilities and returns the total log-likelihood.
fn e_step(data: &Dataset, params: &GmmParams, ws: &mut Workspace) -> Result<f64> {
    let n = data.len();
    let k = params.num_components();
    ws.resp.resize(n * k, 0.0);
    let mut total = 0.0;
    let mut row = vec![0.0; k];
    for (i, x) in data.iter().enumerate() {
        let mut row_max = f64::NEG_INFINITY;
        for (j, (c, chol)) in params.components.iter().zip(&ws.chols).enumerate() {
            let lp = ws.log_weights[j] + log_density_with_cholesky(c.mean(), chol, x)?;
            row[j] = lp;
            row_max = row_max.max(lp);
        }
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - row_max).exp();
            sum += *v;
        }
        total += row_max + sum.ln();
        for (j, &v) in row.iter().enumerate() {
            ws.resp[i * k + j] = v / sum;
        }
    }
    Ok(total)
}

/// M-step: re-estimates weights, means and covariances from responsibilities.
/// Components with vanishing mass are re-seeded at a random data point with
/// `COV_FLOOR * I` covariance; returns how many re-seeds happened.
fn m_step(
    data: &Dataset,
    params: &mut GmmParams,
    ws: &Workspace,
    rng: &mut ChaCha8Rng,
) -> Result<usize> {
    let n = data.len();
    let d = data.dim();
    let k = params.num_components();
    let mut reseeds = 0;

    let mut masses = vec![0.0; k];
    for i in 0..n {
        for j in 0..k {
            masses[j] += ws.resp[i * k + j];
        }
    }

    for j in 0..k {
        if masses[j] < EMPTY_MASS {
            let pick = rng.random_range(0..n);
            let mean = DVector::from_column_slice(data.point(pick));
            let cov = DMatrix::identity(d, d) * COV_FLOOR;
            params.components[j] = GaussianParams::new(mean, cov)?;
            params.weights[j] = 1.0 / n as f64;
            reseeds += 1;
            continue;
        }
        let mut mean = DVector::zeros(d);
        for (i, x) in data.iter().enumerate() {
            let r = ws.resp[i * k + j];
            for (m, &xv) in mean.iter_mut().zip(x) {
                *m += r * xv;
            }
        }
        mean /= masses[j];

        let mut cov = DMatrix::zeros(d, d);
        let mut centered = vec![0.0; d];
        for (i, x) in data.iter().enumerate() {
            let r = ws.resp[i * k + j];
            for c in 0..d {
                centered[c] = x[c] - mean[c];
            }
            for a in 0..d {
                for b in a..d {
                    cov[(a, b)] += r * centered[a] * centered[b];
                }
            }
        }
        cov /= masses[j];
        for a in 0..d {
            for b in (a + 1)..d {
                cov[(b, a)] = cov[(a, b)];
            }
        }
        let cov = linalg::floor_eigenvalues(&cov, COV_FLOOR);
        params.components[j] = GaussianParams::new(mean, cov)?;
        params.weights[j] = masses[j] / n as f64;
    }

    // Renormalize: re-seeds may have nudged the total off 1.
    let total: f64 = params.weights.iter().sum();
    for w in params.weights.iter_mut() {
        *w /= total;
    }
    Ok(reseeds)
}

/// k-means++-style seeding: centers drawn with probability proportional to
/// squared distance from the already chosen ones, covariances set to the
/// global data covariance.
fn seed_kmeans_pp(data: &Dataset, k: usize, rng: &mut ChaCha8Rng) -> Result<GmmParams> {
    let n = data.len();
    let global = fit_gaussian(data)?;
    let mut centers: Vec<usize> = vec![rng.random_range(0..n)];
    let mut best_d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(data.point(i), data.point(centers[0])))
        .collect();
    while centers.len() < k {
        let total: f64 = best_d2.iter().sum();
        let next = if total <= 0.0 {
            // All points coincide with a center; fall back to uniform.
            rng.random_range(0..n)
        } else {
            let mut u: f64 = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in best_d2.iter().enumerate() {
                u -= w;
                if u <= 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        };
        centers.push(next);
        for i in 0..n {
            let d2 = sq_dist(data.point(i), data.point(next));
            if d2 < best_d2[i] {
                best_d2[i] = d2;
            }
        }
    }
    let components = centers
        .iter()
        .map(|&c| {
            GaussianParams::new(
                DVector::from_column_slice(data.point(c)),
                global.cov().clone(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    GmmParams::new(vec![1.0 / k as f64; k], components)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Fits a `k`-component mixture by EM.
///
/// With `init` present, EM starts from it (warm start); otherwise components
/// are seeded k-means++-style from `rng`. The log-likelihood trace is
/// non-decreasing between consecutive steps except across a re-seed event.
pub fn fit_gmm_em(
    data: &Dataset,
    k: usize,
    init: Option<&GmmParams>,
    rng: &mut ChaCha8Rng,
) -> Result<GmmFit> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be >= 1".into()));
    }
    let n = data.len();
    let d = data.dim();
    if n < k * (d + 1) {
        return Err(Error::InsufficientData(format!(
            "EM with k={k} in dimension {d} needs at least {} points, got {n}",
            k * (d + 1)
        )));
    }
    data.check_finite()?;

    if k == 1 {
        // Single component: the closed-form fit is the EM fixed point.
        let g = fit_gaussian(data)?;
        let chol = g.cov().clone().cholesky().ok_or_else(|| {
            Error::NumericalFailure("fitted covariance lost positive definiteness".into())
        })?;
        let ll: f64 = data
            .iter()
            .map(|x| log_density_with_cholesky(g.mean(), &chol, x))
            .sum::<Result<f64>>()?;
        return Ok(GmmFit {
            params: GmmParams::new(vec![1.0], vec![g])?,
            log_likelihood: ll,
            trace: vec![ll],
            iterations: 1,
            reseeds: 0,
        });
    }

    if let Some(p) = init {
        if p.num_components() != k || p.dim() != d {
            return Err(Error::InvalidInput(format!(
                "warm start has k={} dim={} but fit wants k={k} dim={d}",
                p.num_components(),
                p.dim()
            )));
        }
    }
    let mut params = match init {
        Some(p) => p.clone(),
        None => seed_kmeans_pp(data, k, rng)?,
    };

    let mut trace = Vec::new();
    let mut reseeds = 0;
    let mut prev_ll = f64::NEG_INFINITY;
    let mut iterations = 0;
    for _ in 0..EM_MAX_ITERS {
        let mut ws = prepare(&params)?;
        let ll = e_step(data, &params, &mut ws)?;
        trace.push(ll);
        iterations += 1;
        if (ll - prev_ll).abs() < EM_TOL && prev_ll.is_finite() {
            prev_ll = ll;
            break;
        }
        prev_ll = ll;
        reseeds += m_step(data, &mut params, &ws, rng)?;
    }

    Ok(GmmFit {
        params,
        log_likelihood: prev_ll,
        trace,
        iterations,
        reseeds,
    })
}

/// Categorical component draw followed by a Gaussian draw.
pub fn sample_gmm(params: &GmmParams, count: usize, rng: &mut ChaCha8Rng) -> Dataset {
    let d = params.dim();
    let k = params.num_components();
    let roots: Vec<DMatrix<f64>> = params.components.iter().map(|c| c.sqrt_cov()).collect();
    let mut data = Vec::with_capacity(count * d);
    let mut z = DVector::zeros(d);
    for _ in 0..count {
        let mut u: f64 = rng.random();
        let mut pick = k - 1;
        for (j, &w) in params.weights.iter().enumerate() {
            u -= w;
            if u <= 0.0 {
                pick = j;
                break;
            }
        }
        for zi in z.iter_mut() {
            *zi = rng.sample(rand_distr::StandardNormal);
        }
        let x = params.components[pick].mean() + &roots[pick] * &z;
        data.extend(x.iter());
    }
    Dataset {
        data,
        dim: d,
        source: SourceTag::Synthetic,
    }
}

/// Stable log-sum-exp of the weighted component log-densities.
pub fn gmm_log_density(params: &GmmParams, x: &[f64]) -> Result<f64> {
    let mut terms = Vec::with_capacity(params.num_components());
    for (w, c) in params.weights.iter().zip(&params.components) {
        let lp = super::gaussian_log_density(c, x)?;
        terms.push(w.max(f64::MIN_POSITIVE).ln() + lp);
    }
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln())
}
