//! Maximum-likelihood generative model families.
//!
//! Two concrete families are provided: the closed-form multivariate
//! [`GaussianParams`] and the EM-fitted mixture [`GmmParams`]. Both flatten
//! into the Euclidean [`ModelParams`] vector used by the retraining operator
//! and the Jacobian analysis.

mod gaussian;
mod gmm;
mod params;

pub use gaussian::{fit_gaussian, gaussian_log_density, sample_gaussian, GaussianParams};
pub use gmm::{fit_gmm_em, gmm_log_density, sample_gmm, GmmFit, GmmParams};
pub use params::{param_distance, ModelKind, ModelParams};

use crate::rng::{substream, Purpose};
use crate::{Error, Result};
use rand_chacha::ChaCha8Rng;

/// Provenance of a point set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceTag {
    Real,
    Synthetic,
    Mixed,
}

/// An ordered list of points in `R^d`, stored row-major in a flat buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    data: Vec<f64>,
    dim: usize,
    source: SourceTag,
}

impl Dataset {
    /// Builds a dataset from a flat row-major buffer.
    pub fn from_flat(data: Vec<f64>, dim: usize, source: SourceTag) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("dataset dimension must be >= 1".into()));
        }
        if data.len() % dim != 0 {
            return Err(Error::InvalidInput(format!(
                "flat buffer length {} is not a multiple of dim {}",
                data.len(),
                dim
            )));
        }
        Ok(Dataset { data, dim, source })
    }

    /// Builds a dataset from per-point rows, checking uniform dimensionality.
    pub fn from_rows(rows: Vec<Vec<f64>>, source: SourceTag) -> Result<Self> {
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        if dim == 0 {
            return Err(Error::InvalidInput(
                "dataset needs at least one non-empty point".into(),
            ));
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::InvalidInput(format!(
                    "point {} has dimension {} but expected {}",
                    i,
                    row.len(),
                    dim
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Dataset { data, dim, source })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn source(&self) -> SourceTag {
        self.source
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Concatenates two datasets of equal dimension; the result is `Mixed`.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.dim != other.dim {
            return Err(Error::InvalidInput(format!(
                "cannot concatenate datasets of dimension {} and {}",
                self.dim, other.dim
            )));
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(Dataset {
            data,
            dim: self.dim,
            source: SourceTag::Mixed,
        })
    }

    /// Errors unless every coordinate is finite.
    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(pos) => Err(Error::InvalidInput(format!(
                "non-finite coordinate {} of point {}",
                pos % self.dim,
                pos / self.dim
            ))),
        }
    }
}

/// A fitted generative model from one of the supported families.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Gaussian(GaussianParams),
    Gmm(GmmParams),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Gaussian(_) => ModelKind::Gaussian,
            Model::Gmm(g) => ModelKind::Gmm { k: g.num_components() },
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Model::Gaussian(g) => g.dim(),
            Model::Gmm(g) => g.dim(),
        }
    }

    /// Draws `count` i.i.d. samples, tagged `Synthetic`.
    pub fn sample(&self, count: usize, rng: &mut ChaCha8Rng) -> Dataset {
        match self {
            Model::Gaussian(g) => sample_gaussian(g, count, rng),
            Model::Gmm(g) => sample_gmm(g, count, rng),
        }
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        match self {
            Model::Gaussian(g) => gaussian_log_density(g, x),
            Model::Gmm(g) => gmm_log_density(g, x),
        }
    }

    /// Fits a model of kind `kind` to `data`, warm-starting at `warm` when
    /// the family supports it (EM for mixtures; the Gaussian closed form has
    /// a unique maximizer and ignores the warm start).
    pub fn fit(
        kind: ModelKind,
        data: &Dataset,
        warm: Option<&Model>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Model> {
        match kind {
            ModelKind::Gaussian => Ok(Model::Gaussian(fit_gaussian(data)?)),
            ModelKind::Gmm { k } => {
                let init = match warm {
                    Some(Model::Gmm(g)) => Some(g),
                    Some(Model::Gaussian(_)) => {
                        return Err(Error::InvalidInput(
                            "cannot warm-start a GMM fit from Gaussian parameters".into(),
                        ))
                    }
                    None => None,
                };
                Ok(Model::Gmm(fit_gmm_em(data, k, init, rng)?.params))
            }
        }
    }

    /// Canonical flattening into a Euclidean parameter vector.
    pub fn to_params(&self) -> ModelParams {
        match self {
            Model::Gaussian(g) => params::flatten_gaussian(g),
            Model::Gmm(g) => params::flatten_gmm(g),
        }
    }

    /// Rebuilds a model from its flattened form.
    pub fn from_params(p: &ModelParams) -> Result<Model> {
        match p.kind() {
            ModelKind::Gaussian => Ok(Model::Gaussian(params::unflatten_gaussian(p)?)),
            ModelKind::Gmm { .. } => Ok(Model::Gmm(params::unflatten_gmm(p)?)),
        }
    }

    /// Derived-stream convenience used by experiment drivers.
    pub fn sample_with(&self, count: usize, seed: u64, step: u64, purpose: Purpose) -> Dataset {
        let mut rng = substream(seed, step, purpose);
        self.sample(count, &mut rng)
    }
}
