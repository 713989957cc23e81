//! Canonical flattening of model parameters into Euclidean vectors.
//!
//! Flattening order:
//!
//! * Gaussian: `[mean (d entries), upper-triangular covariance row-major
//!   (d(d+1)/2 entries)]`.
//! * GMM with K components: `[K-1 weight logits (last weight implied),
//!   then each component's Gaussian block in order]`.
//!
//! Keeping weights as free logits makes the whole vector unconstrained,
//! which the finite-difference Jacobian machinery relies on.

use super::{GaussianParams, GmmParams};
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Model family discriminator carried by [`ModelParams`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Gaussian,
    Gmm { k: usize },
}

impl ModelKind {
    /// Flattened parameter count for ambient dimension `d`.
    pub fn param_count(&self, d: usize) -> usize {
        let gaussian = d + d * (d + 1) / 2;
        match self {
            ModelKind::Gaussian => gaussian,
            ModelKind::Gmm { k } => (k - 1) + k * gaussian,
        }
    }
}

/// Flat parameter vector of a generative model, plus enough metadata to
/// reconstruct it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    kind: ModelKind,
    dim: usize,
    theta: DVector<f64>,
}

impl ModelParams {
    pub fn new(kind: ModelKind, dim: usize, theta: DVector<f64>) -> Result<Self> {
        let expect = kind.param_count(dim);
        if theta.len() != expect {
            return Err(Error::InvalidInput(format!(
                "theta has length {} but {:?} in dimension {} needs {}",
                theta.len(),
                kind,
                dim,
                expect
            )));
        }
        Ok(ModelParams { kind, dim, theta })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// Same metadata, new coordinates (used by finite-difference probes).
    pub fn with_theta(&self, theta: DVector<f64>) -> Result<Self> {
        ModelParams::new(self.kind, self.dim, theta)
    }
}

/// Parameter-count-rescaled Euclidean distance `||a - b||_2 / p`.
pub fn param_distance(a: &ModelParams, b: &ModelParams) -> Result<f64> {
    if a.kind != b.kind || a.dim != b.dim {
        return Err(Error::InvalidInput(format!(
            "parameter kinds differ: {:?}/dim {} vs {:?}/dim {}",
            a.kind, a.dim, b.kind, b.dim
        )));
    }
    let p = a.theta.len() as f64;
    Ok((&a.theta - &b.theta).norm() / p)
}

fn push_upper_triangle(cov: &DMatrix<f64>, out: &mut Vec<f64>) {
    for i in 0..cov.nrows() {
        for j in i..cov.ncols() {
            out.push(cov[(i, j)]);
        }
    }
}

fn pop_upper_triangle(d: usize, theta: &[f64], offset: &mut usize) -> DMatrix<f64> {
    let mut cov = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let v = theta[*offset];
            *offset += 1;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    cov
}

pub(super) fn flatten_gaussian(g: &GaussianParams) -> ModelParams {
    let d = g.dim();
    let mut theta = Vec::with_capacity(ModelKind::Gaussian.param_count(d));
    theta.extend(g.mean().iter());
    push_upper_triangle(g.cov(), &mut theta);
    ModelParams {
        kind: ModelKind::Gaussian,
        dim: d,
        theta: DVector::from_vec(theta),
    }
}

pub(super) fn unflatten_gaussian(p: &ModelParams) -> Result<GaussianParams> {
    if p.kind != ModelKind::Gaussian {
        return Err(Error::InvalidInput(format!(
            "expected Gaussian parameters, got {:?}",
            p.kind
        )));
    }
    let d = p.dim;
    let theta = p.theta.as_slice();
    let mean = DVector::from_column_slice(&theta[..d]);
    let mut offset = d;
    let cov = pop_upper_triangle(d, theta, &mut offset);
    GaussianParams::new(mean, cov)
}

// Weights below this are clamped before taking logits so that flattening
// never produces infinities.
const WEIGHT_CLAMP: f64 = 1e-300;

pub(super) fn flatten_gmm(g: &GmmParams) -> ModelParams {
    let d = g.dim();
    let k = g.num_components();
    let mut theta = Vec::with_capacity(ModelKind::Gmm { k }.param_count(d));
    let last = g.weights()[k - 1].max(WEIGHT_CLAMP);
    for &w in &g.weights()[..k - 1] {
        theta.push((w.max(WEIGHT_CLAMP) / last).ln());
    }
    for comp in g.components() {
        theta.extend(comp.mean().iter());
        push_upper_triangle(comp.cov(), &mut theta);
    }
    ModelParams {
        kind: ModelKind::Gmm { k },
        dim: d,
        theta: DVector::from_vec(theta),
    }
}

pub(super) fn unflatten_gmm(p: &ModelParams) -> Result<GmmParams> {
    let ModelKind::Gmm { k } = p.kind else {
        return Err(Error::InvalidInput(format!(
            "expected GMM parameters, got {:?}",
            p.kind
        )));
    };
    let d = p.dim;
    let theta = p.theta.as_slice();

    // Softmax with the implied last logit fixed at 0.
    let mut logits = Vec::with_capacity(k);
    logits.extend_from_slice(&theta[..k - 1]);
    logits.push(0.0);
    let max_logit = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max_logit).exp()).collect();
    let total: f64 = exps.iter().sum();
    let weights: Vec<f64> = exps.iter().map(|&e| e / total).collect();

    let mut offset = k - 1;
    let mut components = Vec::with_capacity(k);
    for _ in 0..k {
        let mean = DVector::from_column_slice(&theta[offset..offset + d]);
        offset += d;
        let cov = pop_upper_triangle(d, theta, &mut offset);
        components.push(GaussianParams::new(mean, cov)?);
    }
    GmmParams::new(weights, components)
}
