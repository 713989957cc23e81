//! Experiment configuration: a structured-text file (TOML sections of
//! `key = value` pairs) plus command-line overrides.

use crate::datasets::{ToyKind, ToySpec, EIGHT_GAUSSIANS_RADIUS, EIGHT_GAUSSIANS_STD, TWO_MOONS_NOISE};
use crate::metrics::MetricId;
use crate::models::ModelKind;
use crate::{Error, Result};
use serde::Deserialize;
use std::path::{Path, PathBuf};

/// Which experiment to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    GaussianCollapse,
    Retrain,
    Jacobian,
    Plateau,
    Metrics,
}

impl Experiment {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "collapse" | "gaussian_collapse" => Ok(Experiment::GaussianCollapse),
            "retrain" => Ok(Experiment::Retrain),
            "jacobian" => Ok(Experiment::Jacobian),
            "plateau" => Ok(Experiment::Plateau),
            "metrics" => Ok(Experiment::Metrics),
            other => Err(Error::InvalidInput(format!(
                "unknown experiment {other:?} (expected collapse, retrain, jacobian, plateau, metrics)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::GaussianCollapse => "collapse",
            Experiment::Retrain => "retrain",
            Experiment::Jacobian => "jacobian",
            Experiment::Plateau => "plateau",
            Experiment::Metrics => "metrics",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: String,
    #[serde(default)]
    dataset: Option<RawDataset>,
    #[serde(default)]
    model: Option<RawModel>,
    #[serde(default)]
    run: Option<RawRun>,
    #[serde(default)]
    collapse: Option<RawCollapse>,
    #[serde(default)]
    jacobian: Option<RawJacobian>,
    #[serde(default)]
    plateau: Option<RawPlateau>,
    #[serde(default)]
    output: Option<RawOutput>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDataset {
    kind: String,
    n: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    radius: Option<f64>,
    #[serde(default)]
    std: Option<f64>,
    #[serde(default)]
    noise_std: Option<f64>,
    #[serde(default)]
    path: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    kind: String,
    #[serde(default)]
    k: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    #[serde(default)]
    lambdas: Vec<f64>,
    #[serde(default)]
    fully_synthetic: bool,
    #[serde(default)]
    n_real: Option<usize>,
    #[serde(default)]
    t_max: Option<usize>,
    #[serde(default)]
    seeds: Option<String>,
    #[serde(default)]
    metrics: Vec<String>,
    #[serde(default)]
    reference_budget: Option<usize>,
    #[serde(default = "default_true")]
    warm_start: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCollapse {
    n: usize,
    #[serde(default = "default_dim")]
    d: usize,
    t_max: usize,
    #[serde(default = "default_sigma0")]
    sigma0: f64,
    #[serde(default)]
    mc_rate_samples: Option<usize>,
    #[serde(default)]
    emit_trajectories: bool,
}

fn default_dim() -> usize {
    1
}

fn default_sigma0() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawJacobian {
    lambdas: Vec<f64>,
    #[serde(default)]
    mc_samples: Option<usize>,
    #[serde(default)]
    fd_step: Option<f64>,
    #[serde(default)]
    epsilon_budget: Option<usize>,
    #[serde(default)]
    lipschitz_pairs: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlateau {
    lambda: f64,
    n_grid: Vec<usize>,
    #[serde(default)]
    t_max: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    #[serde(default)]
    dir: Option<String>,
    #[serde(default)]
    emit_svg: bool,
    #[serde(default)]
    workers: Option<usize>,
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seeds: Option<String>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub emit_svg: bool,
    /// Forces the experiment named by the CLI subcommand.
    pub experiment: Option<Experiment>,
}

/// Fully validated experiment configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub dataset: Option<ToySpec>,
    pub model_kind: ModelKind,
    pub lambdas: Vec<f64>,
    pub fully_synthetic: bool,
    pub n_real: usize,
    pub t_max: usize,
    pub seeds: Vec<u64>,
    pub metric_set: Vec<MetricId>,
    pub reference_budget: usize,
    pub warm_start: bool,
    pub collapse: CollapseSettings,
    pub jacobian: JacobianSettings,
    pub plateau: PlateauSettings,
    pub output_dir: PathBuf,
    pub emit_svg: bool,
    pub workers: usize,
    /// Raw config text echoed into the run manifest.
    pub source_text: String,
}

#[derive(Debug, Clone)]
pub struct CollapseSettings {
    pub n: usize,
    pub d: usize,
    pub t_max: usize,
    pub sigma0: f64,
    pub mc_rate_samples: usize,
    /// Also write one per-seed trajectory CSV per run.
    pub emit_trajectories: bool,
}

#[derive(Debug, Clone)]
pub struct JacobianSettings {
    pub lambdas: Vec<f64>,
    pub mc_samples: usize,
    pub fd_step: f64,
    pub epsilon_budget: usize,
    pub lipschitz_pairs: usize,
}

#[derive(Debug, Clone)]
pub struct PlateauSettings {
    pub lambda: f64,
    pub n_grid: Vec<usize>,
    pub t_max: usize,
}

/// Parses `"0..100"` (half-open range) or `"1,5,9"` into a seed list.
pub fn parse_seed_spec(spec: &str) -> Result<Vec<u64>> {
    let spec = spec.trim();
    if let Some((a, b)) = spec.split_once("..") {
        let start: u64 = a.trim().parse().map_err(|_| {
            Error::InvalidInput(format!("bad seed range start {a:?} in {spec:?}"))
        })?;
        let end: u64 = b.trim().parse().map_err(|_| {
            Error::InvalidInput(format!("bad seed range end {b:?} in {spec:?}"))
        })?;
        if end <= start {
            return Err(Error::InvalidInput(format!(
                "empty seed range {spec:?}"
            )));
        }
        return Ok((start..end).collect());
    }
    spec.split(',')
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| Error::InvalidInput(format!("bad seed {s:?} in {spec:?}")))
        })
        .collect()
}

fn parse_dataset(raw: &RawDataset) -> Result<ToySpec> {
    let kind = match raw.kind.trim().to_ascii_lowercase().as_str() {
        "eight_gaussians" => ToyKind::EightGaussians {
            radius: raw.radius.unwrap_or(EIGHT_GAUSSIANS_RADIUS),
            std: raw.std.unwrap_or(EIGHT_GAUSSIANS_STD),
        },
        "two_moons" => ToyKind::TwoMoons {
            noise_std: raw.noise_std.unwrap_or(TWO_MOONS_NOISE),
        },
        "file" => ToyKind::FromFile {
            path: PathBuf::from(raw.path.clone().ok_or_else(|| {
                Error::InvalidInput("dataset.kind = \"file\" needs dataset.path".into())
            })?),
        },
        other => {
            return Err(Error::InvalidInput(format!(
                "unknown dataset kind {other:?} (expected eight_gaussians, two_moons, file)"
            )))
        }
    };
    Ok(ToySpec {
        kind,
        n: raw.n,
        seed: raw.seed,
    })
}

fn parse_model(raw: &Option<RawModel>) -> Result<ModelKind> {
    match raw {
        None => Ok(ModelKind::Gaussian),
        Some(m) => match m.kind.trim().to_ascii_lowercase().as_str() {
            "gaussian" => Ok(ModelKind::Gaussian),
            "gmm" => {
                let k = m.k.ok_or_else(|| {
                    Error::InvalidInput("model.kind = \"gmm\" needs model.k".into())
                })?;
                if k == 0 {
                    return Err(Error::InvalidInput("model.k must be >= 1".into()));
                }
                Ok(ModelKind::Gmm { k })
            }
            other => Err(Error::InvalidInput(format!(
                "unknown model kind {other:?} (expected gaussian, gmm)"
            ))),
        },
    }
}

/// Loads and validates a config file, applying CLI overrides.
pub fn load_config(path: impl AsRef<Path>, overrides: &Overrides) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(&display, e))?;
    parse_config(&text, overrides).map_err(|e| match e {
        Error::InvalidInput(m) => Error::parse(&display, m),
        other => other,
    })
}

/// Parses config text (exposed for tests and defaults).
pub fn parse_config(text: &str, overrides: &Overrides) -> Result<ExperimentConfig> {
    let raw: RawConfig =
        toml::from_str(text).map_err(|e| Error::InvalidInput(format!("config parse: {e}")))?;

    let mut experiment = Experiment::parse(&raw.experiment)?;
    if let Some(exp) = overrides.experiment {
        experiment = exp;
    }

    let dataset = raw.dataset.as_ref().map(parse_dataset).transpose()?;
    let model_kind = parse_model(&raw.model)?;

    let run = raw.run.clone().unwrap_or(RawRun {
        lambdas: Vec::new(),
        fully_synthetic: false,
        n_real: None,
        t_max: None,
        seeds: None,
        metrics: Vec::new(),
        reference_budget: None,
        warm_start: true,
    });

    let seed_spec = overrides
        .seeds
        .clone()
        .or_else(|| run.seeds.clone())
        .unwrap_or_else(|| "0..1".to_string());
    let seeds = parse_seed_spec(&seed_spec)?;
    if seeds.is_empty() {
        return Err(Error::InvalidInput("need at least one seed".into()));
    }

    let metric_set = run
        .metrics
        .iter()
        .map(|s| MetricId::parse(s))
        .collect::<Result<Vec<_>>>()?;

    let n_real = run
        .n_real
        .or(dataset.as_ref().map(|d| d.n))
        .unwrap_or(1000);
    let t_max = run.t_max.unwrap_or(20);

    if experiment == Experiment::Retrain && run.lambdas.is_empty() && !run.fully_synthetic {
        return Err(Error::InvalidInput(
            "retrain experiment needs run.lambdas (or run.fully_synthetic = true)".into(),
        ));
    }
    if let Some(l) = run.lambdas.iter().find(|l| !(**l >= 0.0)) {
        return Err(Error::InvalidInput(format!("lambda must be >= 0, got {l}")));
    }

    let collapse_raw = raw.collapse.unwrap_or(RawCollapse {
        n: 10,
        d: 1,
        t_max: 30,
        sigma0: 1.0,
        mc_rate_samples: None,
        emit_trajectories: false,
    });
    let collapse = CollapseSettings {
        n: collapse_raw.n,
        d: collapse_raw.d,
        t_max: collapse_raw.t_max,
        sigma0: collapse_raw.sigma0,
        mc_rate_samples: collapse_raw.mc_rate_samples.unwrap_or(100_000),
        emit_trajectories: collapse_raw.emit_trajectories,
    };

    let jacobian_raw = raw.jacobian.unwrap_or(RawJacobian {
        lambdas: vec![0.1, 0.25, 0.5, 1.0],
        mc_samples: None,
        fd_step: None,
        epsilon_budget: None,
        lipschitz_pairs: None,
    });
    let jacobian = JacobianSettings {
        lambdas: jacobian_raw.lambdas,
        mc_samples: jacobian_raw.mc_samples.unwrap_or(100_000),
        fd_step: jacobian_raw.fd_step.unwrap_or(crate::stability::DEFAULT_FD_STEP),
        epsilon_budget: jacobian_raw.epsilon_budget.unwrap_or(10_000),
        lipschitz_pairs: jacobian_raw.lipschitz_pairs.unwrap_or(10_000),
    };

    let plateau_raw = raw.plateau.unwrap_or(RawPlateau {
        lambda: 0.5,
        n_grid: vec![250, 1000, 4000],
        t_max: None,
    });
    let plateau = PlateauSettings {
        lambda: plateau_raw.lambda,
        n_grid: plateau_raw.n_grid,
        t_max: plateau_raw.t_max.unwrap_or(40),
    };

    let output = raw.output.unwrap_or(RawOutput {
        dir: None,
        emit_svg: false,
        workers: None,
    });
    let output_dir = overrides
        .out
        .clone()
        .or_else(|| output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let workers = overrides
        .workers
        .or(output.workers)
        .or_else(|| {
            std::env::var("SELFCONSUME_WORKERS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
        .max(1);

    Ok(ExperimentConfig {
        experiment,
        dataset,
        model_kind,
        lambdas: run.lambdas,
        fully_synthetic: run.fully_synthetic,
        n_real,
        t_max,
        seeds,
        metric_set,
        reference_budget: run.reference_budget.unwrap_or(n_real),
        warm_start: run.warm_start,
        collapse,
        jacobian,
        plateau,
        output_dir,
        emit_svg: overrides.emit_svg || output.emit_svg,
        workers,
        source_text: text.to_string(),
    })
}
