//! Multivariate Gaussian: closed-form fit, sampling, log-density.

use super::{Dataset, SourceTag};
use crate::linalg;
use crate::{Error, Result, COV_FLOOR};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;

/// Mean vector and symmetric positive-definite covariance of a multivariate
/// Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianParams {
    /// Validates the invariants: square, symmetric to 1e-10, smallest
    /// eigenvalue at least [`COV_FLOOR`] (with a small tolerance for
    /// roundoff on the floor itself).
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::InvalidInput(format!(
                "covariance is {}x{} but mean has dimension {}",
                cov.nrows(),
                cov.ncols(),
                d
            )));
        }
        if mean.iter().any(|v| !v.is_finite()) || cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "gaussian parameters contain non-finite entries".into(),
            ));
        }
        if !linalg::is_symmetric(&cov, 1e-10) {
            return Err(Error::InvalidInput(
                "covariance is not symmetric within 1e-10".into(),
            ));
        }
        let min_eig = linalg::min_eigenvalue(&cov);
        if min_eig < COV_FLOOR * (1.0 - 1e-6) {
            return Err(Error::InvalidInput(format!(
                "covariance smallest eigenvalue {min_eig:e} is below the floor {COV_FLOOR:e}"
            )));
        }
        Ok(GaussianParams { mean, cov })
    }

    /// Symmetrizes and eigenvalue-floors `cov`, then constructs.
    pub fn new_floored(mean: DVector<f64>, mut cov: DMatrix<f64>) -> Result<Self> {
        linalg::symmetrize(&mut cov);
        let cov = linalg::floor_eigenvalues(&cov, COV_FLOOR);
        GaussianParams::new(mean, cov)
    }

    /// Standard normal in `d` dimensions.
    pub fn standard(d: usize) -> Self {
        GaussianParams {
            mean: DVector::zeros(d),
            cov: DMatrix::identity(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Symmetric principal square root of the covariance.
    pub fn sqrt_cov(&self) -> DMatrix<f64> {
        linalg::sym_sqrt(&self.cov)
    }
}

/// Sample mean and unbiased (divisor `n - 1`) covariance, symmetrized and
/// eigenvalue-floored.
pub fn fit_gaussian(data: &Dataset) -> Result<GaussianParams> {
    let n = data.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "gaussian fit needs at least 2 points, got {n}"
        )));
    }
    data.check_finite()?;
    let d = data.dim();

    let mut mean = DVector::zeros(d);
    for p in data.iter() {
        for (m, &x) in mean.iter_mut().zip(p) {
            *m += x;
        }
    }
    mean /= n as f64;

    let mut cov = DMatrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for p in data.iter() {
        for j in 0..d {
            centered[j] = p[j] - mean[j];
        }
        for i in 0..d {
            for j in i..d {
                cov[(i, j)] += centered[i] * centered[j];
            }
        }
    }
    cov /= (n - 1) as f64;
    for i in 0..d {
        for j in (i + 1)..d {
            cov[(j, i)] = cov[(i, j)];
        }
    }

    GaussianParams::new_floored(mean, cov)
}

/// Draws `count` points `x = mu + sqrt(cov) z` with `z` standard normal,
/// using the symmetric principal square root of the covariance.
pub fn sample_gaussian(params: &GaussianParams, count: usize, rng: &mut ChaCha8Rng) -> Dataset {
    let d = params.dim();
    let root = params.sqrt_cov();
    let mut data = Vec::with_capacity(count * d);
    let mut z = DVector::zeros(d);
    for _ in 0..count {
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        let x = &params.mean + &root * &z;
        data.extend(x.iter());
    }
    Dataset {
        data,
        dim: d,
        source: SourceTag::Synthetic,
    }
}

/// Log-density `-(x-mu)^T cov^{-1} (x-mu)/2 - log det(2 pi cov)/2`, computed
/// via the Cholesky factorization.
pub fn gaussian_log_density(params: &GaussianParams, x: &[f64]) -> Result<f64> {
    let d = params.dim();
    if x.len() != d {
        return Err(Error::InvalidInput(format!(
            "point has dimension {} but model expects {}",
            x.len(),
            d
        )));
    }
    let chol = params
        .cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NumericalFailure("covariance is not positive definite".into()))?;
    log_density_with_cholesky(&params.mean, &chol, x)
}

/// Shared kernel for Gaussian log-densities given a precomputed Cholesky
/// factor; the mixture E-step reuses this per component.
pub(super) fn log_density_with_cholesky(
    mean: &DVector<f64>,
    chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>,
    x: &[f64],
) -> Result<f64> {
    let d = mean.len();
    let mut diff = DVector::zeros(d);
    for i in 0..d {
        diff[i] = x[i] - mean[i];
    }
    let l = chol.l_dirty();
    // Forward substitution: solve L y = diff in place.
    for i in 0..d {
        let mut acc = diff[i];
        for j in 0..i {
            acc -= l[(i, j)] * diff[j];
        }
        diff[i] = acc / l[(i, i)];
    }
    let quad: f64 = diff.iter().map(|v| v * v).sum();
    let half_log_det: f64 = (0..d).map(|i| l[(i, i)].ln()).sum();
    Ok(-0.5 * quad - half_log_det - 0.5 * (d as f64) * (2.0 * PI).ln())
}
