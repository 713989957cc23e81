//! Small dense linear-algebra helpers shared across modules.
//!
//! Everything here operates on `nalgebra` dynamic matrices; parameter counts
//! stay in the tens-to-hundreds, so dense eigendecompositions are plenty.

use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Checks symmetry to absolute tolerance `tol`.
pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > tol {
                return false;
            }
        }
    }
    true
}

/// Replaces `m` by its symmetric part `(m + m^T) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Symmetric eigendecomposition returning `(eigenvalues, eigenvectors)`.
///
/// The input must already be symmetric; this is the single entry point all
/// spectral helpers below go through.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = m.clone().symmetric_eigen();
    (eig.eigenvalues, eig.eigenvectors)
}

/// Applies `f` to every eigenvalue of a symmetric matrix and reassembles.
fn map_eigenvalues(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let (vals, vecs) = sym_eigen(m);
    let mapped = DVector::from_iterator(vals.len(), vals.iter().map(|&v| f(v)));
    let mut out = &vecs * DMatrix::from_diagonal(&mapped) * vecs.transpose();
    symmetrize(&mut out);
    out
}

/// Floors the eigenvalues of a symmetric matrix at `floor`.
///
/// When no eigenvalue is below the floor the input is returned bit-for-bit;
/// reassembling through the eigenbasis would otherwise perturb low-order
/// bits of matrices the floor never touched.
pub fn floor_eigenvalues(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    if min_eigenvalue(m) >= floor {
        return m.clone();
    }
    map_eigenvalues(m, |v| v.max(floor))
}

/// Symmetric principal square root of a PSD matrix.
///
/// Negative eigenvalues (roundoff from an almost-PSD input) are clamped to
/// zero before the root is taken.
pub fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    map_eigenvalues(m, |v| v.max(0.0).sqrt())
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let (vals, _) = sym_eigen(m);
    vals.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Largest eigenvalue of a symmetric matrix.
pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let (vals, _) = sym_eigen(m);
    vals.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Spectral norm of an arbitrary square matrix via power iteration on
/// `m^T m`.
///
/// Converges when the iterate moves by less than `tol` in Rayleigh quotient,
/// or errors out after `max_iters` sweeps.
pub fn spectral_norm(m: &DMatrix<f64>, tol: f64, max_iters: usize) -> Result<f64> {
    let n = m.ncols();
    if n == 0 {
        return Ok(0.0);
    }
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::NumericalFailure(
            "spectral_norm: matrix has non-finite entries".into(),
        ));
    }
    let gram = m.transpose() * m;
    // Deterministic start with energy in every coordinate.
    let mut v = DVector::from_iterator(n, (0..n).map(|i| 1.0 + (i as f64) * 1e-3));
    v /= v.norm();
    let mut prev = 0.0f64;
    for _ in 0..max_iters {
        let w = &gram * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        v = w / norm;
        let rayleigh = (&gram * &v).dot(&v);
        if (rayleigh - prev).abs() <= tol * rayleigh.max(1.0) {
            return Ok(rayleigh.max(0.0).sqrt());
        }
        prev = rayleigh;
    }
    Err(Error::NumericalFailure(format!(
        "spectral_norm: power iteration did not converge in {max_iters} iterations"
    )))
}

/// Frobenius distance between two matrices of equal shape.
pub fn frobenius_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm()
}
