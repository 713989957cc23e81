//! Command-line front end for self-consuming generative model experiments.

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use selfconsume_core::runner::{self, Experiment, Overrides};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "selfconsume",
    version,
    about = "Iterative retraining of generative models on mixed real/synthetic data: \
             collapse dynamics, stability certificates, and toy-scale experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Experiment configuration file (TOML sections of key = value pairs).
    #[arg(long)]
    config: PathBuf,
    /// Seed list override: "0..100" or "1,2,3".
    #[arg(long)]
    seed: Option<String>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker-thread count (default: SELFCONSUME_WORKERS or all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Render SVG charts alongside the CSV tables.
    #[arg(long)]
    emit_svg: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Self-consuming Gaussian collapse curves against the analytic envelope.
    Collapse(CommonArgs),
    /// Iterative retraining sweep over mixing ratios and seeds.
    Retrain(CommonArgs),
    /// Operator Jacobian norms and stability certificates.
    Jacobian(CommonArgs),
    /// Finite-sample plateau scaling across dataset sizes.
    Plateau(CommonArgs),
    /// One-shot metric evaluation of a fitted model against a dataset.
    Metrics(CommonArgs),
    /// Render SVG charts from an existing summary.csv.
    Render {
        /// Summary table produced by the retrain experiment.
        summary: PathBuf,
        /// Directory to write the charts into.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn run(common: &CommonArgs, experiment: Experiment) -> anyhow::Result<usize> {
    let overrides = Overrides {
        seeds: common.seed.clone(),
        out: common.out.clone(),
        workers: common.workers,
        emit_svg: common.emit_svg,
        experiment: Some(experiment),
    };
    let config = runner::load_config(&common.config, &overrides)
        .with_context(|| format!("loading config {}", common.config.display()))?;
    let report = runner::run_experiment(&config).context("running experiment")?;
    for file in &report.files {
        println!("wrote {}", file.display());
    }
    if report.aborted_runs > 0 {
        eprintln!("{} run(s) aborted; see manifest.txt", report.aborted_runs);
    }
    Ok(report.aborted_runs)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Collapse(c) => run(c, Experiment::GaussianCollapse),
        Command::Retrain(c) => run(c, Experiment::Retrain),
        Command::Jacobian(c) => run(c, Experiment::Jacobian),
        Command::Plateau(c) => run(c, Experiment::Plateau),
        Command::Metrics(c) => run(c, Experiment::Metrics),
        Command::Render { summary, out } => runner::render_curves(summary, out)
            .map(|files| {
                for file in &files {
                    println!("wrote {}", file.display());
                }
                0
            })
            .map_err(anyhow::Error::from),
    };
    match outcome {
        Ok(0) => ExitCode::SUCCESS,
        Ok(_) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
