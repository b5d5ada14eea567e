//! Command-line front end: data generation, single fits, sweeps,
//! iteration-scaling runs, figure traces, landscape checks and the regime
//! diagnostic. Exit code 0 on success, 2 on validation errors, 3 otherwise.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use overspec::harness::{run_figure, run_iteration_scaling, run_sweep, SweepSpec};
use overspec::sampling::{sample_gaussian, sample_symmetric_mixture};
use overspec::solvers::{default_init, diagnose, fit, Algorithm, DiagnoseOptions, Model, SolverConfig};
use overspec::theory::{
    check_homogeneity_diagonal, check_homogeneity_isotropic, check_pseudo_convexity, check_stability_scaling,
    default_grid, gradcheck,
};
use overspec::{Dataset, Error, QuadratureRule, Result, TruthSpec};

#[derive(Parser)]
#[command(name = "overspec", version, about = "EM and ELU for over-specified Gaussian mixtures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    HomogIso,
    HomogDiag,
    PseudoConvex,
    Stability,
    Gradcheck,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a dataset and write it as CSV.
    Gen {
        #[arg(long, default_value = "isotropic")]
        model: Model,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated `θ*`; a nonzero value draws the symmetric mixture `½N(−θ*,σ*²I)+½N(θ*,σ*²I)`.
        #[arg(long, value_delimiter = ',')]
        theta_star: Option<Vec<f64>>,
        #[arg(long, default_value_t = 1.0)]
        sigma_star2: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit one model to a CSV dataset from the default start.
    Fit {
        #[arg(long)]
        model: Model,
        #[arg(long)]
        algo: Algorithm,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        eta: f64,
        #[arg(long, default_value_t = 0.8)]
        beta: f64,
        #[arg(long, default_value_t = 500)]
        iters: usize,
        #[arg(long, default_value_t = 0.1)]
        val_frac: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// Run an error-vs-n sweep described by a JSON spec.
    Sweep {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        summary_out: Option<PathBuf>,
    },
    /// Iterations-to-best scaling with the EM contrast.
    Iters {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Paired EM and ELU traces on one synthetic dataset.
    Figure {
        #[arg(long)]
        model: Model,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0.01)]
        eta: f64,
        #[arg(long, default_value_t = 0.8)]
        beta: f64,
        #[arg(long, default_value_t = 500)]
        iters: usize,
        #[arg(long, default_value_t = 0.1)]
        val_frac: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Landscape, stability and gradient checks.
    Check {
        #[arg(long, value_enum)]
        which: Which,
        /// Dimension for homog-iso, stability and gradcheck.
        #[arg(long, default_value_t = 4)]
        d: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// EM-vs-ELU regime diagnostic on a CSV dataset.
    Diagnose {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 50)]
        em_iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn read_spec(path: &Path) -> Result<SweepSpec> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn config(eta: f64, beta: f64, iters: usize, val_frac: f64, seed: u64) -> SolverConfig {
    SolverConfig { eta, beta, max_iters: iters, val_fraction: val_frac, seed, record_truth_errors: true }
}

#[derive(Serialize)]
struct FitSummary<'a> {
    algorithm: Algorithm,
    model: Model,
    best_index: usize,
    records: usize,
    terminated_reason: String,
    best: &'a overspec::solvers::IterRecord,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { model: _, d, n, seed, theta_star, sigma_star2, out } => {
            let theta = theta_star.unwrap_or_else(|| vec![0.0; d]);
            let truth = TruthSpec::new(theta, sigma_star2)?;
            let data = if truth.theta_star.iter().all(|v| *v == 0.0) {
                sample_gaussian(n, d, &truth, seed)?
            } else {
                sample_symmetric_mixture(n, d, &truth, seed)?
            };
            data.write_csv(&out)
        }
        Command::Fit { model, algo, data, eta, beta, iters, val_frac, seed, trace_out } => {
            let data = Dataset::read_csv(&data)?;
            let cfg = config(eta, beta, iters, val_frac, seed);
            let init = default_init(model, &data, seed)?;
            let trace = fit(algo, model, &data, &init, &cfg, Some(&data.truth))?;
            if let Some(p) = trace_out {
                fs::write(p, trace.to_csv())?;
            }
            let summary = FitSummary {
                algorithm: algo,
                model,
                best_index: trace.best_index,
                records: trace.records.len(),
                terminated_reason: trace.terminated_reason.to_string(),
                best: trace.best(),
            };
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(())
        }
        Command::Sweep { spec, out, summary_out } => {
            let result = run_sweep(&read_spec(&spec)?)?;
            fs::write(out, result.to_csv())?;
            if let Some(p) = summary_out {
                write_json(&p, &result)?;
            }
            Ok(())
        }
        Command::Iters { spec, out } => write_json(&out, &run_iteration_scaling(&read_spec(&spec)?)?),
        Command::Figure { model, d, n, eta, beta, iters, val_frac, seed, out } => {
            let fig = run_figure(model, d, n, &config(eta, beta, iters, val_frac, seed))?;
            fs::write(out, fig.to_csv())?;
            Ok(())
        }
        Command::Check { which, d, seed, out } => {
            let quad = QuadratureRule::gauss_hermite(64)?;
            let grid = default_grid();
            match which {
                Which::HomogIso => {
                    let alpha = if d == 1 { 6.0 } else { 2.0 };
                    write_json(&out, &check_homogeneity_isotropic(d, alpha, &grid, &quad)?)
                }
                Which::HomogDiag => write_json(&out, &check_homogeneity_diagonal(d, 2.0, 6.0, &grid, &quad)?),
                Which::PseudoConvex => write_json(&out, &check_pseudo_convexity(d, 100_000, 0.3, &quad, seed)?),
                Which::Stability => {
                    let n_grid = [1_000, 3_000, 10_000, 30_000, 100_000];
                    write_json(&out, &check_stability_scaling(d, 0.3, &n_grid, 20, 16, &quad, seed, &grid)?)
                }
                Which::Gradcheck => {
                    let reports = [Model::Isotropic, Model::Diagonal, Model::General]
                        .into_iter()
                        .map(|m| gradcheck(m, d, 20, 1e-6, seed))
                        .collect::<Result<Vec<_>>>()?;
                    write_json(&out, &reports)
                }
            }
        }
        Command::Diagnose { data, em_iters, seed, out } => {
            let data = Dataset::read_csv(&data)?;
            let cfg = SolverConfig { seed, ..SolverConfig::symmetric() };
            let opts = DiagnoseOptions { em_iters, ..DiagnoseOptions::default() };
            write_json(&out, &diagnose(&data, &cfg, None, &opts)?)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if Error::is_validation(&e) { 2 } else { 3 })
        }
    }
}
