//! Experiment runner behind the `selfconsume` CLI: orchestrates sweeps over
//! `(lambda, seed)` cells, persists trajectories and reports as CSV, writes
//! a reproducibility manifest, and optionally renders SVG charts.

mod config;
mod svg;

pub use config::{
    load_config, parse_config, parse_seed_spec, CollapseSettings, Experiment, ExperimentConfig,
    JacobianSettings, Overrides, PlateauSettings,
};
pub use svg::{parse_summary, render_curves, write_summary_csv};

use crate::collapse::{
    collapse_rate_1d, collapse_rate_multivariate, expected_sqrt_cov_envelope,
    run_self_consuming_gaussian,
};
use crate::datasets;
use crate::metrics::{self, MetricId};
use crate::models::{fit_gaussian, GaussianParams, Model, ModelKind};
use crate::retrain::{run_iterative_retraining, Mixing, RetrainConfig, Trajectory};
use crate::rng::{substream, Purpose};
use crate::stability;
use crate::stats;
use crate::textio::fmt_f64;
use crate::{linalg, Error, Result};
use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Outcome of `run_experiment`: files written plus the aborted-run count
/// (nonzero exit status when positive).
#[derive(Debug)]
pub struct RunReport {
    pub files: Vec<PathBuf>,
    pub aborted_runs: usize,
}

/// Runs the configured experiment, writing everything under
/// `config.output_dir`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunReport> {
    ensure_writable(&config.output_dir)?;
    match config.experiment {
        Experiment::Retrain => run_retrain(config),
        Experiment::GaussianCollapse => run_collapse(config),
        Experiment::Jacobian => run_jacobian(config),
        Experiment::Plateau => run_plateau(config),
        Experiment::Metrics => run_metrics(config),
    }
}

/// Fail fast if the output directory cannot be created or written.
fn ensure_writable(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let probe = dir.join(".write_probe");
    std::fs::write(&probe, b"ok").map_err(|e| Error::io(probe.display().to_string(), e))?;
    std::fs::remove_file(&probe).map_err(|e| Error::io(probe.display().to_string(), e))?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Runs `jobs` closures over a fixed-size worker pool; results come back in
/// job order regardless of scheduling.
fn run_pool<T: Send, F: Fn(usize) -> T + Sync>(jobs: usize, workers: usize, f: F) -> Vec<T> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<T>>> = Mutex::new((0..jobs).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers.min(jobs).max(1) {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                if idx >= jobs {
                    break;
                }
                let out = f(idx);
                results.lock().unwrap()[idx] = Some(out);
            });
        }
    });
    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|o| o.expect("job completed"))
        .collect()
}

fn dataset_digest(data: &crate::models::Dataset) -> String {
    let csv = datasets::points_csv_string(data);
    let hash = Sha256::digest(csv.as_bytes());
    let mut hex = String::with_capacity(64);
    for b in hash {
        let _ = write!(hex, "{b:02x}");
    }
    hex
}

struct ManifestBuilder {
    lines: Vec<String>,
}

impl ManifestBuilder {
    fn new(config: &ExperimentConfig) -> Self {
        let mut lines = vec![
            format!("tool = selfconsume {}", env!("CARGO_PKG_VERSION")),
            format!("experiment = {}", config.experiment.name()),
            format!(
                "wall_clock_unix = {}",
                std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0)
            ),
            format!("workers = {}", config.workers),
        ];
        lines.push("".into());
        lines.push("[config]".into());
        for l in config.source_text.lines() {
            lines.push(format!("  {l}"));
        }
        ManifestBuilder { lines }
    }

    fn kv(&mut self, key: &str, value: impl std::fmt::Display) {
        self.lines.push(format!("{key} = {value}"));
    }

    fn section(&mut self, name: &str) {
        self.lines.push("".into());
        self.lines.push(format!("[{name}]"));
    }

    fn raw(&mut self, line: String) {
        self.lines.push(line);
    }

    fn write(self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.txt");
        write_text(&path, &(self.lines.join("\n") + "\n"))?;
        Ok(path)
    }
}

// ---------------------------------------------------------------------------
// Retrain experiment
// ---------------------------------------------------------------------------

fn trajectory_csv(traj: &Trajectory, metric_set: &[MetricId]) -> String {
    let mut out = String::from("t");
    for m in metric_set {
        let _ = write!(out, ",{}", m.name());
    }
    out.push_str(",param_dist_to_init,param_dist_to_reference\n");
    for rec in &traj.records {
        let _ = write!(out, "{}", rec.t);
        for (_, v) in &rec.metrics {
            let _ = write!(out, ",{}", fmt_f64(*v));
        }
        let _ = write!(out, ",{}", fmt_f64(rec.param_dist_to_init));
        match rec.param_dist_to_reference {
            Some(v) => {
                let _ = write!(out, ",{}", fmt_f64(v));
            }
            None => out.push(','),
        }
        out.push('\n');
    }
    out
}

fn run_retrain(config: &ExperimentConfig) -> Result<RunReport> {
    let spec = config.dataset.clone().ok_or_else(|| {
        Error::InvalidInput("retrain experiment needs a [dataset] section".into())
    })?;
    let real = datasets::generate(&spec)?;
    if real.len() != config.n_real {
        return Err(Error::InvalidInput(format!(
            "dataset has {} points but n_real = {}",
            real.len(),
            config.n_real
        )));
    }

    let mut mixings: Vec<Mixing> = config.lambdas.iter().map(|&l| Mixing::Ratio(l)).collect();
    if config.fully_synthetic {
        mixings.push(Mixing::FullySynthetic);
    }
    let cells: Vec<(Mixing, u64)> = mixings
        .iter()
        .flat_map(|&m| config.seeds.iter().map(move |&s| (m, s)))
        .collect();

    let results = run_pool(cells.len(), config.workers, |idx| {
        let (mixing, seed) = cells[idx];
        let run_cfg = RetrainConfig {
            mixing,
            n_real: config.n_real,
            t_max: config.t_max,
            model_kind: config.model_kind,
            seed,
            metric_set: config.metric_set.clone(),
            reference_budget: config.reference_budget,
            warm_start: config.warm_start,
        };
        run_iterative_retraining(&run_cfg, &real)
    });

    let mut files = Vec::new();
    let mut aborted = 0usize;
    let mut manifest = ManifestBuilder::new(config);
    manifest.kv("dataset_digest", format!("sha256:{}", dataset_digest(&real)));
    manifest.section("runs");

    // Per-cell trajectory files plus manifest ledger.
    for ((mixing, seed), result) in cells.iter().zip(&results) {
        let label = mixing.label();
        match result {
            Ok(traj) => {
                let sizes: Vec<usize> = traj.records[1..]
                    .iter()
                    .map(|r| r.training_size)
                    .collect();
                let size_note = match (sizes.first(), sizes.iter().all(|&s| Some(&s) == sizes.first())) {
                    (Some(&s), true) => format!("{s}"),
                    (Some(_), false) => "varied".to_string(),
                    (None, _) => "none".to_string(),
                };
                let flags: usize = traj.records.iter().map(|r| r.flags.len()).sum();
                manifest.raw(format!(
                    "lambda={label} seed={seed} status=ok training_size_per_iteration={size_note} metric_flags={flags}"
                ));
                let path = config
                    .output_dir
                    .join(format!("trajectory_{label}_{seed}.csv"));
                write_text(&path, &trajectory_csv(traj, &config.metric_set))?;
                files.push(path);
            }
            Err(e) => {
                aborted += 1;
                manifest.raw(format!("lambda={label} seed={seed} status=aborted error={e}"));
            }
        }
    }

    // Aggregated summary: per (lambda, t) median and IQR across seeds.
    let mut metric_names: Vec<String> = config
        .metric_set
        .iter()
        .map(|m| m.name().to_string())
        .collect();
    metric_names.push("param_dist_to_init".to_string());
    let mut summary_rows: Vec<(String, usize, usize, Vec<[f64; 3]>)> = Vec::new();
    for mixing in &mixings {
        let label = mixing.label();
        let cell_trajs: Vec<&Trajectory> = cells
            .iter()
            .zip(&results)
            .filter(|((m, _), r)| m == mixing && r.is_ok())
            .map(|(_, r)| r.as_ref().unwrap())
            .collect();
        if cell_trajs.is_empty() {
            continue;
        }
        for t in 0..=config.t_max {
            let mut stats_row = Vec::with_capacity(metric_names.len());
            let mut n_seeds = 0usize;
            for (mi, _) in metric_names.iter().enumerate() {
                let values: Vec<f64> = cell_trajs
                    .iter()
                    .filter_map(|traj| {
                        let rec = traj.records.get(t)?;
                        let v = if mi < config.metric_set.len() {
                            rec.metrics[mi].1
                        } else {
                            rec.param_dist_to_init
                        };
                        v.is_finite().then_some(v)
                    })
                    .collect();
                n_seeds = n_seeds.max(values.len());
                if values.is_empty() {
                    stats_row.push([f64::NAN; 3]);
                } else {
                    stats_row.push([
                        stats::quantile(&values, 0.5),
                        stats::quantile(&values, 0.25),
                        stats::quantile(&values, 0.75),
                    ]);
                }
            }
            summary_rows.push((label.clone(), t, n_seeds, stats_row));
        }
    }
    let summary_path = config.output_dir.join("summary.csv");
    write_summary_csv(&summary_path, &metric_names, &summary_rows)?;
    files.push(summary_path.clone());

    files.push(manifest.write(&config.output_dir)?);

    if config.emit_svg {
        files.extend(render_curves(&summary_path, &config.output_dir)?);
    }

    Ok(RunReport {
        files,
        aborted_runs: aborted,
    })
}

// ---------------------------------------------------------------------------
// Gaussian collapse experiment
// ---------------------------------------------------------------------------

fn run_collapse(config: &ExperimentConfig) -> Result<RunReport> {
    let settings = &config.collapse;
    let d = settings.d;
    let init = GaussianParams::new(
        DVector::zeros(d),
        DMatrix::identity(d, d) * settings.sigma0 * settings.sigma0,
    )?;

    let rate = if d == 1 {
        collapse_rate_1d(settings.n)?
    } else {
        let mut rng = substream(0xC0111A55E, 0, Purpose::MonteCarlo);
        collapse_rate_multivariate(settings.n, d, settings.mc_rate_samples, &mut rng)?
    };

    // Batched seed sweep: per-batch sums of sqrt-cov and cov matrices per t,
    // merged in batch order so worker scheduling never changes the output.
    let batches = 100usize.min(config.seeds.len());
    let per_batch = config.seeds.len() / batches;
    let t_len = settings.t_max + 1;
    let batch_results = run_pool(batches, config.workers, |b| -> Result<_> {
        let lo = b * per_batch;
        let hi = if b + 1 == batches {
            config.seeds.len()
        } else {
            lo + per_batch
        };
        let mut sqrt_sums: Vec<DMatrix<f64>> = vec![DMatrix::zeros(d, d); t_len];
        let mut cov_trace_sums = vec![0.0f64; t_len];
        for &seed in &config.seeds[lo..hi] {
            let traj = run_self_consuming_gaussian(&init, settings.n, settings.t_max, seed)?;
            for (t, step) in traj.steps.iter().enumerate() {
                sqrt_sums[t] += &step.sqrt_cov;
                cov_trace_sums[t] += step.cov.trace();
            }
        }
        Ok((sqrt_sums, cov_trace_sums, hi - lo))
    });

    let mut sqrt_batch_means: Vec<Vec<DMatrix<f64>>> = Vec::with_capacity(batches);
    let mut trace_batch_means: Vec<Vec<f64>> = Vec::with_capacity(batches);
    let mut total_sqrt: Vec<DMatrix<f64>> = vec![DMatrix::zeros(d, d); t_len];
    let mut total_trace = vec![0.0f64; t_len];
    let mut total_seeds = 0usize;
    for r in batch_results {
        let (sqrt_sums, trace_sums, count) = r?;
        sqrt_batch_means.push(sqrt_sums.iter().map(|m| m / count as f64).collect());
        trace_batch_means.push(trace_sums.iter().map(|v| v / count as f64).collect());
        for t in 0..t_len {
            total_sqrt[t] += &sqrt_sums[t];
            total_trace[t] += trace_sums[t];
        }
        total_seeds += count;
    }

    let mut per_seed_files = Vec::new();
    if settings.emit_trajectories {
        for &seed in &config.seeds {
            let traj = run_self_consuming_gaussian(&init, settings.n, settings.t_max, seed)?;
            let mut csv = String::from("t");
            for i in 0..d {
                let _ = write!(csv, ",mean{i}");
            }
            for i in 0..d {
                for j in i..d {
                    let _ = write!(csv, ",cov{i}{j}");
                }
            }
            csv.push_str(",log_det_cov\n");
            for step in &traj.steps {
                let _ = write!(csv, "{}", step.t);
                for v in step.mean.iter() {
                    let _ = write!(csv, ",{}", fmt_f64(*v));
                }
                for i in 0..d {
                    for j in i..d {
                        let _ = write!(csv, ",{}", fmt_f64(step.cov[(i, j)]));
                    }
                }
                let _ = write!(csv, ",{}\n", fmt_f64(step.log_det_cov));
            }
            let path = config.output_dir.join(format!("collapse_seed_{seed}.csv"));
            write_text(&path, &csv)?;
            per_seed_files.push(path);
        }
    }

    // Aggregate CSV: measured mean sqrt-cov eigenvalues vs the alpha^t
    // envelope, plus the covariance-trace martingale column.
    let mut out = String::from("t");
    for i in 0..d {
        let _ = write!(out, ",mean_sqrt_eig{i},se_sqrt_eig{i},envelope_eig{i}");
    }
    out.push_str(",mean_cov_trace,se_cov_trace\n");
    for t in 0..t_len {
        let mean_sqrt = &total_sqrt[t] / total_seeds as f64;
        let (eigs, _) = linalg::sym_eigen(&mean_sqrt);
        let mut eigs: Vec<f64> = eigs.iter().copied().collect();
        eigs.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let envelope = expected_sqrt_cov_envelope(&init, &rate, t);
        let (env_eigs, _) = linalg::sym_eigen(&envelope);
        let mut env_eigs: Vec<f64> = env_eigs.iter().copied().collect();
        env_eigs.sort_by(|a, b| b.partial_cmp(a).unwrap());

        let _ = write!(out, "{t}");
        for i in 0..d {
            let batch_eigs: Vec<f64> = sqrt_batch_means
                .iter()
                .map(|bm| {
                    let (e, _) = linalg::sym_eigen(&bm[t]);
                    let mut e: Vec<f64> = e.iter().copied().collect();
                    e.sort_by(|a, b| b.partial_cmp(a).unwrap());
                    e[i]
                })
                .collect();
            let se = stats::batch_stderr(&batch_eigs, batch_eigs.len());
            let _ = write!(
                out,
                ",{},{},{}",
                fmt_f64(eigs[i]),
                fmt_f64(se),
                fmt_f64(env_eigs[i])
            );
        }
        let trace_batches: Vec<f64> = trace_batch_means.iter().map(|bm| bm[t]).collect();
        let _ = write!(
            out,
            ",{},{}\n",
            fmt_f64(total_trace[t] / total_seeds as f64),
            fmt_f64(stats::batch_stderr(&trace_batches, trace_batches.len()))
        );
    }
    let csv_path = config.output_dir.join("collapse_summary.csv");
    write_text(&csv_path, &out)?;

    let mut manifest = ManifestBuilder::new(config);
    manifest.kv("n_per_step", settings.n);
    manifest.kv("dimension", d);
    manifest.kv("seeds", total_seeds);
    manifest.kv("alpha", fmt_f64(rate.alpha));
    if let Some(se) = rate.mc_stderr {
        manifest.kv("alpha_mc_stderr", fmt_f64(se));
    }
    let mut files = vec![csv_path];
    files.append(&mut per_seed_files);

    if config.emit_svg {
        // Reuse the summary chart format: measured curve vs envelope.
        let rows: Vec<(String, usize, usize, Vec<[f64; 3]>)> = (0..t_len)
            .flat_map(|t| {
                let mean_sqrt = &total_sqrt[t] / total_seeds as f64;
                let (eigs, _) = linalg::sym_eigen(&mean_sqrt);
                let top = eigs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let env = expected_sqrt_cov_envelope(&init, &rate, t);
                let (env_eigs, _) = linalg::sym_eigen(&env);
                let env_top = env_eigs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                [
                    ("measured".to_string(), t, total_seeds, vec![[top; 3]]),
                    ("envelope".to_string(), t, total_seeds, vec![[env_top; 3]]),
                ]
            })
            .collect();
        let chart_csv = config.output_dir.join("collapse_curves.csv");
        write_summary_csv(&chart_csv, &["sqrt_cov_top_eig".to_string()], &rows)?;
        files.push(chart_csv.clone());
        files.extend(render_curves(&chart_csv, &config.output_dir)?);
    }

    files.push(manifest.write(&config.output_dir)?);
    Ok(RunReport {
        files,
        aborted_runs: 0,
    })
}

// ---------------------------------------------------------------------------
// Jacobian / certificate experiment
// ---------------------------------------------------------------------------

fn run_jacobian(config: &ExperimentConfig) -> Result<RunReport> {
    let settings = &config.jacobian;

    // Reference optimum: fitted to the configured dataset when present,
    // otherwise the standard 2-D Gaussian (well-specified case).
    let (theta_star, real) = match &config.dataset {
        Some(spec) => {
            let real = datasets::generate(spec)?;
            (fit_gaussian(&real)?, Some(real))
        }
        None => (GaussianParams::standard(2), None),
    };
    let model = Model::Gaussian(theta_star.clone());

    let mut rng = substream(0x14C0B1A5, 0, Purpose::MonteCarlo);
    let pair = match &real {
        Some(data) => stability::estimate_hessians_empirical(
            &model,
            data,
            settings.mc_samples,
            settings.fd_step,
            &mut rng,
        )?,
        None => stability::estimate_hessians(
            &model,
            &model,
            settings.mc_samples,
            settings.fd_step,
            &mut rng,
        )?,
    };

    let epsilon = match &real {
        Some(data) => {
            let mut erng = substream(0x14C0B1A5, 1, Purpose::MonteCarlo);
            stability::estimate_epsilon(&model, data, settings.epsilon_budget, &mut erng)?
        }
        None => 0.0,
    };
    let mut lrng = substream(0x14C0B1A5, 2, Purpose::MonteCarlo);
    let l_const = stability::estimate_lipschitz(&model, settings.lipschitz_pairs, &mut lrng)?;

    let mut csv = String::from(
        "lambda,fd_jac_norm,hessian_jac_norm,alpha,epsilon,l_const,bound,stable_condition,valid\n",
    );
    let mut text = String::from("stability certificates\n");
    let _ = writeln!(
        text,
        "theta*: {}-d Gaussian, epsilon = {:.6}, L = {:.6}",
        theta_star.dim(),
        epsilon,
        l_const
    );
    for &lambda in &settings.lambdas {
        let (_, fd_norm) = stability::jacobian_population_operator(
            &theta_star,
            &theta_star,
            lambda,
            settings.fd_step,
        )?;
        let (_, formula_norm) = stability::jacobian_from_hessians(&pair, lambda)?;
        let cert = stability::build_certificate(&pair, epsilon, l_const, lambda, fd_norm);
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            lambda,
            fmt_f64(fd_norm),
            fmt_f64(formula_norm),
            fmt_f64(cert.alpha),
            fmt_f64(cert.epsilon),
            fmt_f64(cert.l_const),
            fmt_f64(cert.bound),
            cert.stable_condition,
            cert.valid
        );
        let _ = writeln!(
            text,
            "lambda = {lambda}: |J| fd = {fd_norm:.6}, via Hessians = {formula_norm:.6}, bound = {:.6}, stable = {}",
            cert.bound, cert.stable_condition
        );
    }

    let csv_path = config.output_dir.join("certificate.csv");
    write_text(&csv_path, &csv)?;
    let text_path = config.output_dir.join("certificate_summary.txt");
    write_text(&text_path, &text)?;
    let mut manifest = ManifestBuilder::new(config);
    manifest.kv("mc_samples", settings.mc_samples);
    manifest.kv("fd_step", fmt_f64(settings.fd_step));
    let manifest_path = manifest.write(&config.output_dir)?;
    Ok(RunReport {
        files: vec![csv_path, text_path, manifest_path],
        aborted_runs: 0,
    })
}

// ---------------------------------------------------------------------------
// Plateau experiment
// ---------------------------------------------------------------------------

fn run_plateau(config: &ExperimentConfig) -> Result<RunReport> {
    let settings = &config.plateau;
    let data_dist = GaussianParams::standard(2);
    let template = RetrainConfig {
        mixing: Mixing::Ratio(settings.lambda),
        n_real: 0,
        t_max: settings.t_max,
        model_kind: ModelKind::Gaussian,
        seed: 0,
        metric_set: Vec::new(),
        reference_budget: 0,
        warm_start: true,
    };
    let theta_star = Model::Gaussian(data_dist.clone()).to_params();
    let report = stability::measure_plateau(
        &template,
        &data_dist,
        &settings.n_grid,
        &config.seeds,
        &theta_star,
    )?;

    let mut csv = String::from("n,plateau,stderr\n");
    for e in &report.entries {
        let _ = writeln!(csv, "{},{},{}", e.n, fmt_f64(e.plateau), fmt_f64(e.stderr));
    }
    let csv_path = config.output_dir.join("plateau.csv");
    write_text(&csv_path, &csv)?;

    let mut text = String::from("finite-sample plateau\n");
    let _ = writeln!(text, "lambda = {}", settings.lambda);
    let _ = writeln!(text, "log-log slope = {:.4}", report.loglog_slope);
    match report.rho_hat {
        Some(r) => {
            let _ = writeln!(text, "rho_hat = {r:.4}");
        }
        None => {
            let _ = writeln!(text, "rho_hat = absent");
        }
    }
    let _ = writeln!(text, "divergent_runs = {}", report.divergent_runs);
    let text_path = config.output_dir.join("plateau_summary.txt");
    write_text(&text_path, &text)?;

    let manifest_path = ManifestBuilder::new(config).write(&config.output_dir)?;
    Ok(RunReport {
        files: vec![csv_path, text_path, manifest_path],
        aborted_runs: 0,
    })
}

// ---------------------------------------------------------------------------
// One-shot metrics experiment
// ---------------------------------------------------------------------------

fn run_metrics(config: &ExperimentConfig) -> Result<RunReport> {
    let spec = config.dataset.clone().ok_or_else(|| {
        Error::InvalidInput("metrics experiment needs a [dataset] section".into())
    })?;
    let real = datasets::generate(&spec)?;
    let seed = config.seeds[0];
    let mut rng = substream(seed, 0, Purpose::Init);
    let model = Model::fit(config.model_kind, &real, None, &mut rng)?;
    let generated = model.sample_with(config.reference_budget, seed, 0, Purpose::MetricSample);

    let mut csv = String::from("metric,value,n_real,n_generated,status,subsampled\n");
    let ids = if config.metric_set.is_empty() {
        vec![
            MetricId::W1,
            MetricId::W2,
            MetricId::Frechet,
            MetricId::Precision,
            MetricId::Recall,
            MetricId::CovTrace,
        ]
    } else {
        config.metric_set.clone()
    };
    for id in ids {
        let (value, status, subsampled) = match id {
            MetricId::W1 => {
                let m = metrics::wasserstein1_capped(&generated, &real, metrics::ASSIGNMENT_CAP)?;
                (m.value, m.status, m.subsampled)
            }
            MetricId::W2 => {
                let m = metrics::wasserstein2_capped(&generated, &real, metrics::ASSIGNMENT_CAP)?;
                (m.value, m.status, m.subsampled)
            }
            MetricId::Frechet => (
                metrics::frechet_between_samples(&real, &generated)?,
                metrics::MetricStatus::Ok,
                false,
            ),
            MetricId::Precision | MetricId::Recall => {
                let pr =
                    metrics::precision_recall_knn(&real, &generated, metrics::DEFAULT_KNN_K)?;
                let v = if id == MetricId::Precision {
                    pr.precision
                } else {
                    pr.recall
                };
                (v, pr.status, false)
            }
            MetricId::CovTrace => (
                crate::retrain::total_covariance_trace(&model)?,
                metrics::MetricStatus::Ok,
                false,
            ),
        };
        let _ = writeln!(
            csv,
            "{},{},{},{},{:?},{}",
            id.name(),
            fmt_f64(value),
            real.len(),
            generated.len(),
            status,
            subsampled
        );
    }
    let csv_path = config.output_dir.join("metrics.csv");
    write_text(&csv_path, &csv)?;
    let mut manifest = ManifestBuilder::new(config);
    manifest.kv("dataset_digest", format!("sha256:{}", dataset_digest(&real)));
    let manifest_path = manifest.write(&config.output_dir)?;
    Ok(RunReport {
        files: vec![csv_path, manifest_path],
        aborted_runs: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runner::config::parse_config;

    fn temp_out(name: &str) -> PathBuf {
        let dir = std::env::temp_dir()
            .join("selfconsume_runner_tests")
            .join(name);
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn retrain_config(out: &Path) -> ExperimentConfig {
        let text = format!(
            r#"
experiment = "retrain"

[dataset]
kind = "eight_gaussians"
n = 200
seed = 3

[model]
kind = "gaussian"

[run]
lambdas = [0.0, 1.0]
fully_synthetic = true
t_max = 3
seeds = "0..5"
metrics = ["w2", "cov_trace"]

[output]
dir = "{}"
"#,
            out.display()
        );
        parse_config(&text, &Overrides::default()).unwrap()
    }

    #[test]
    fn retrain_writes_expected_file_set() {
        let out = temp_out("retrain_files");
        let config = retrain_config(&out);
        let report = run_experiment(&config).unwrap();
        assert_eq!(report.aborted_runs, 0);
        // 3 mixings x 5 seeds trajectories + summary + manifest.
        let trajs: Vec<_> = report
            .files
            .iter()
            .filter(|f| {
                f.file_name()
                    .unwrap()
                    .to_str()
                    .unwrap()
                    .starts_with("trajectory_")
            })
            .collect();
        assert_eq!(trajs.len(), 15);
        assert!(out.join("summary.csv").exists());
        assert!(out.join("manifest.txt").exists());

        // Constant-budget rule from manifest counters.
        let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
        assert!(manifest.contains("lambda=1 seed=0 status=ok training_size_per_iteration=400"));
        assert!(manifest.contains("lambda=0 seed=4 status=ok training_size_per_iteration=200"));
        assert!(manifest
            .contains("lambda=synthetic seed=0 status=ok training_size_per_iteration=200"));
        assert!(manifest.contains("dataset_digest = sha256:"));
    }

    #[test]
    fn reruns_are_byte_identical() {
        let out_a = temp_out("rerun_a");
        let out_b = temp_out("rerun_b");
        let mut config_a = retrain_config(&out_a);
        config_a.workers = 1;
        let mut config_b = retrain_config(&out_b);
        config_b.workers = 4;
        run_experiment(&config_a).unwrap();
        run_experiment(&config_b).unwrap();
        for entry in std::fs::read_dir(&out_a).unwrap() {
            let name = entry.unwrap().file_name();
            if name.to_str().unwrap().ends_with(".csv") {
                let a = std::fs::read(out_a.join(&name)).unwrap();
                let b = std::fs::read(out_b.join(&name)).unwrap();
                assert_eq!(a, b, "file {name:?} differs between reruns");
            }
        }
    }

    #[test]
    fn summary_matches_recomputation_from_trajectory_files() {
        let out = temp_out("summary_check");
        let config = retrain_config(&out);
        run_experiment(&config).unwrap();
        let table = parse_summary(out.join("summary.csv")).unwrap();
        assert_eq!(
            table.metrics,
            vec!["w2", "cov_trace", "param_dist_to_init"]
        );
        // Recompute the lambda=1, w2 medians from the trajectory files.
        for t in 0..=3usize {
            let mut values = Vec::new();
            for seed in 0..5 {
                let text = std::fs::read_to_string(
                    out.join(format!("trajectory_1_{seed}.csv")),
                )
                .unwrap();
                let line = text.lines().nth(t + 1).unwrap();
                let v: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
                values.push(v);
            }
            let want = crate::stats::quantile(&values, 0.5);
            let row = table
                .rows
                .iter()
                .find(|(l, rt, _)| l == "1" && *rt == t as f64)
                .unwrap();
            assert_eq!(row.2[0][0].to_bits(), want.to_bits(), "t = {t}");
        }
    }

    #[test]
    fn collapse_experiment_emits_envelope_column() {
        let out = temp_out("collapse");
        let text = format!(
            r#"
experiment = "collapse"

[run]
seeds = "0..400"

[collapse]
n = 10
d = 1
t_max = 8

[output]
dir = "{}"
"#,
            out.display()
        );
        let config = parse_config(&text, &Overrides::default()).unwrap();
        let report = run_experiment(&config).unwrap();
        assert_eq!(report.aborted_runs, 0);
        let csv = std::fs::read_to_string(out.join("collapse_summary.csv")).unwrap();
        let header = csv.lines().next().unwrap();
        assert_eq!(
            header,
            "t,mean_sqrt_eig0,se_sqrt_eig0,envelope_eig0,mean_cov_trace,se_cov_trace"
        );
        // Envelope follows alpha^t; measured mean tracks it loosely even at
        // this seed count.
        let alpha = collapse_rate_1d(10).unwrap().alpha;
        let rows: Vec<Vec<f64>> = csv
            .lines()
            .skip(1)
            .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
            .collect();
        assert_eq!(rows.len(), 9);
        for (t, row) in rows.iter().enumerate() {
            assert!((row[3] - alpha.powi(t as i32)).abs() < 1e-12);
        }
    }

    #[test]
    fn metrics_experiment_smoke() {
        let out = temp_out("metrics");
        let text = format!(
            r#"
experiment = "metrics"

[dataset]
kind = "two_moons"
n = 300
seed = 1

[model]
kind = "gmm"
k = 4

[output]
dir = "{}"
"#,
            out.display()
        );
        let config = parse_config(&text, &Overrides::default()).unwrap();
        let report = run_experiment(&config).unwrap();
        assert_eq!(report.aborted_runs, 0);
        let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
        assert!(csv.lines().count() >= 6);
        for line in csv.lines().skip(1) {
            let value: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
            assert!(value.is_finite(), "line {line}");
        }
    }

    #[test]
    fn unwritable_output_fails_fast() {
        let config = {
            let mut c = retrain_config(Path::new("/proc/definitely/not/writable"));
            c.output_dir = PathBuf::from("/proc/definitely/not/writable");
            c
        };
        assert!(run_experiment(&config).is_err());
    }
}
