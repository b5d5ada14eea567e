//! Experiment driver: error-vs-n sweeps with log-log slope fits,
//! iterations-to-best scaling with an EM contrast, and paired EM/ELU traces
//! for plotting.
//!
//! Every `(n, trial)` cell derives its own seed from `(master_seed, n,
//! trial)`, so cells run in any order and in parallel without changing a
//! single bit of the result.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{derive_seed, median, mix64};
use crate::params::TruthSpec;
use crate::sampling::{sample_gaussian, split_train_val, Dataset};
use crate::solvers::{default_init, fit_split, Algorithm, FitTrace, Model, ModelParams, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
}

/// Ordinary least squares of `ln y` on `ln x`.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<SlopeFit> {
    if points.len() < 3 {
        return Err(Error::invalid(format!("slope fit needs >= 3 points, got {}", points.len())));
    }
    if let Some(p) = points.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0 && x.is_finite() && y.is_finite())) {
        return Err(Error::invalid(format!("slope fit needs positive finite points, got {p:?}")));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|(x, y)| (x.ln(), y.ln())).collect();
    let (slope, intercept, stderr) = ols(&logs)?;
    Ok(SlopeFit { slope, intercept, stderr })
}

/// `(slope, intercept, stderr of slope)`.
fn ols(pts: &[(f64, f64)]) -> Result<(f64, f64, f64)> {
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if !(sxx > 0.0) {
        return Err(Error::invalid("slope fit needs at least two distinct x values"));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let stderr = if pts.len() > 2 { (sse / (k - 2.0) / sxx).sqrt() } else { 0.0 };
    Ok((slope, intercept, stderr))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub model: Model,
    pub algorithm: Algorithm,
    pub d: usize,
    pub n_grid: Vec<usize>,
    pub trials_per_n: usize,
    pub config: SolverConfig,
    pub master_seed: u64,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::invalid("d must be >= 1"));
        }
        if self.n_grid.is_empty() {
            return Err(Error::invalid("n_grid is empty"));
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) || self.n_grid[0] == 0 {
            return Err(Error::invalid("n_grid must be strictly increasing and positive"));
        }
        if self.trials_per_n == 0 {
            return Err(Error::invalid("trials_per_n must be >= 1"));
        }
        self.config.validate()
    }

    fn cells(&self) -> Vec<(usize, usize)> {
        self.n_grid.iter().flat_map(|&n| (0..self.trials_per_n).map(move |t| (n, t))).collect()
    }
}

/// Seed of cell `(n, trial)`; independent of the rest of the grid.
pub fn child_seed(master: u64, n: usize, trial: usize) -> u64 {
    derive_seed(master, n as u64, trial as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub n: usize,
    pub trial: usize,
    pub err_location: f64,
    pub err_scale: f64,
    pub iters_to_best: usize,
    pub terminated_reason: String,
    /// Diagonal model only: the selected iterate has one dominant coordinate.
    pub one_coordinate: Option<bool>,
}

/// Second-largest `|θ_j|` below a tenth of the largest.
pub const ONE_COORDINATE_CUT: f64 = 0.1;

fn one_coordinate(theta: &[f64]) -> bool {
    let mut m: Vec<f64> = theta.iter().map(|v| v.abs()).collect();
    m.sort_by(|a, b| b.total_cmp(a));
    m.len() < 2 || m[1] < ONE_COORDINATE_CUT * m[0]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepFailure {
    pub n: usize,
    pub trial: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerN {
    pub n: usize,
    pub median_err_location: f64,
    pub median_err_scale: f64,
    pub median_iters_to_best: f64,
    pub rows: usize,
    pub one_coordinate_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub spec: SweepSpec,
    pub rows: Vec<SweepRow>,
    pub failures: Vec<SweepFailure>,
    pub per_n: Vec<PerN>,
    pub slope_location: Option<SlopeFit>,
    pub slope_scale: Option<SlopeFit>,
}

/// One cell's data and split; shared by the ELU sweep and the EM contrast.
struct Cell {
    n: usize,
    trial: usize,
    seed: u64,
}

fn cell_data(spec: &SweepSpec, cell: &Cell) -> Result<(Dataset, crate::sampling::SplitDataset)> {
    let truth = TruthSpec::standard(spec.d);
    let data = sample_gaussian(cell.n, spec.d, &truth, cell.seed)?;
    let split = split_train_val(&data, spec.config.val_fraction, cell.seed)?;
    Ok((data, split))
}

fn run_cell(spec: &SweepSpec, cell: &Cell, algorithm: Algorithm, max_iters: usize) -> Result<FitTrace> {
    let (data, split) = cell_data(spec, cell)?;
    let init = default_init(spec.model, &split.train, mix64(cell.seed ^ 0x1417))?;
    let config = SolverConfig { max_iters, seed: cell.seed, record_truth_errors: true, ..spec.config.clone() };
    fit_split(algorithm, spec.model, &split, &init, &config, Some(&data.truth))
}

fn row_from(cell: &Cell, trace: &FitTrace, best: bool) -> SweepRow {
    let r = if best { trace.best() } else { trace.last() };
    SweepRow {
        n: cell.n,
        trial: cell.trial,
        err_location: r.err_location.unwrap_or(f64::NAN),
        err_scale: r.err_scale.unwrap_or(f64::NAN),
        iters_to_best: trace.best_index,
        terminated_reason: trace.terminated_reason.to_string(),
        one_coordinate: match &r.params {
            ModelParams::Diagonal(p) => Some(one_coordinate(&p.theta)),
            _ => None,
        },
    }
}

fn run_cells(
    spec: &SweepSpec,
    algorithm: Algorithm,
    budget: impl Fn(usize) -> usize + Sync,
    best: bool,
) -> (Vec<SweepRow>, Vec<SweepFailure>) {
    let cells: Vec<Cell> = spec
        .cells()
        .into_iter()
        .map(|(n, trial)| Cell { n, trial, seed: child_seed(spec.master_seed, n, trial) })
        .collect();
    let outcomes: Vec<std::result::Result<SweepRow, SweepFailure>> = cells
        .par_iter()
        .map(|c| match run_cell(spec, c, algorithm, budget(c.n)) {
            Ok(trace) => Ok(row_from(c, &trace, best)),
            Err(e) => Err(SweepFailure { n: c.n, trial: c.trial, error: e.to_string() }),
        })
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => rows.push(r),
            Err(f) => failures.push(f),
        }
    }
    rows.sort_by_key(|r| (r.n, r.trial));
    failures.sort_by_key(|f| (f.n, f.trial));
    (rows, failures)
}

fn summarize(n_grid: &[usize], rows: &[SweepRow]) -> Vec<PerN> {
    n_grid
        .iter()
        .filter_map(|&n| {
            let sel: Vec<&SweepRow> = rows.iter().filter(|r| r.n == n).collect();
            if sel.is_empty() {
                return None;
            }
            let col = |f: &dyn Fn(&SweepRow) -> f64| median(&sel.iter().map(|r| f(r)).collect::<Vec<_>>());
            Some(PerN {
                n,
                median_err_location: col(&|r| r.err_location),
                median_err_scale: col(&|r| r.err_scale),
                median_iters_to_best: col(&|r| r.iters_to_best as f64),
                rows: sel.len(),
                one_coordinate_fraction: sel
                    .iter()
                    .map(|r| r.one_coordinate)
                    .collect::<Option<Vec<bool>>>()
                    .map(|v| v.iter().filter(|b| **b).count() as f64 / v.len() as f64),
            })
        })
        .collect()
}

fn slope_of(per_n: &[PerN], y: impl Fn(&PerN) -> f64) -> Option<SlopeFit> {
    let pts: Vec<(f64, f64)> = per_n.iter().map(|p| (p.n as f64, y(p))).collect();
    fit_loglog_slope(&pts).ok()
}

/// Fit every `(n, trial)` cell from the default initialization and record
/// the best-index errors against the truth `θ* = 0, σ*² = 1`.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    let (rows, failures) = run_cells(spec, spec.algorithm, |_| spec.config.max_iters, true);
    for f in &failures {
        log::warn!("sweep cell n={} trial={} failed: {}", f.n, f.trial, f.error);
    }
    let per_n = summarize(&spec.n_grid, &rows);
    Ok(SweepResult {
        spec: spec.clone(),
        slope_location: slope_of(&per_n, |p| p.median_err_location),
        slope_scale: slope_of(&per_n, |p| p.median_err_scale),
        rows,
        failures,
        per_n,
    })
}

impl SweepResult {
    /// `n,trial,err_location,err_scale,iters_to_best,terminated_reason`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,trial,err_location,err_scale,iters_to_best,terminated_reason\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.n, r.trial, r.err_location, r.err_scale, r.iters_to_best, r.terminated_reason
            );
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationPoint {
    pub n: usize,
    pub median_iters_to_best: f64,
    pub em_iters: usize,
    pub median_em_err_location: f64,
    pub median_elu_best_err_location: f64,
}

/// `iters = a + b ln n` on the per-n medians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogLinearFit {
    pub intercept: f64,
    pub slope: f64,
    pub max_abs_residual: f64,
    /// `max − min` of the fitted medians.
    pub range: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationScaling {
    pub points: Vec<IterationPoint>,
    pub fit: Option<LogLinearFit>,
    pub sweep: SweepResult,
    pub em_rows: Vec<SweepRow>,
}

/// EM budget used for the contrast: `⌈10 ln n⌉`.
pub fn em_budget(n: usize) -> usize {
    (10.0 * (n as f64).ln()).ceil() as usize
}

/// ELU iterations-to-best as a function of `n`, plus EM's final location
/// error after [`em_budget`] iterations on the same data and start.
pub fn run_iteration_scaling(spec: &SweepSpec) -> Result<IterationScaling> {
    let sweep = run_sweep(&SweepSpec { algorithm: Algorithm::Elu, ..spec.clone() })?;
    let (em_rows, em_failures) = run_cells(spec, Algorithm::Em, em_budget, false);
    for f in &em_failures {
        log::warn!("EM cell n={} trial={} failed: {}", f.n, f.trial, f.error);
    }
    let em_per_n = summarize(&spec.n_grid, &em_rows);
    let points: Vec<IterationPoint> = sweep
        .per_n
        .iter()
        .map(|p| IterationPoint {
            n: p.n,
            median_iters_to_best: p.median_iters_to_best,
            em_iters: em_budget(p.n),
            median_em_err_location: em_per_n
                .iter()
                .find(|e| e.n == p.n)
                .map_or(f64::NAN, |e| e.median_err_location),
            median_elu_best_err_location: p.median_err_location,
        })
        .collect();
    let fit = log_linear_fit(&points);
    Ok(IterationScaling { points, fit, sweep, em_rows })
}

fn log_linear_fit(points: &[IterationPoint]) -> Option<LogLinearFit> {
    let pts: Vec<(f64, f64)> = points.iter().map(|p| ((p.n as f64).ln(), p.median_iters_to_best)).collect();
    if pts.len() < 3 {
        return None;
    }
    let (slope, intercept, _) = ols(&pts).ok()?;
    let max_abs_residual = pts.iter().map(|p| (p.1 - intercept - slope * p.0).abs()).fold(0.0, f64::max);
    let lo = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let hi = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    Some(LogLinearFit { intercept, slope, max_abs_residual, range: hi - lo })
}

/// Paired EM and ELU traces on one dataset from one start.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FigureData {
    pub em: FitTrace,
    pub elu: FitTrace,
}

impl FigureData {
    /// `algorithm,iter,train_obj,val_obj,err_location,err_scale,is_best`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("algorithm,iter,train_obj,val_obj,err_location,err_scale,is_best\n");
        for (name, tr) in [("em", &self.em), ("elu", &self.elu)] {
            for line in tr.to_csv().lines().skip(1) {
                let _ = writeln!(s, "{name},{line}");
            }
        }
        s
    }
}

/// `config.max_iters` bounds both runs.
pub fn run_figure(model: Model, d: usize, n: usize, config: &SolverConfig) -> Result<FigureData> {
    config.validate()?;
    let truth = TruthSpec::standard(d);
    let data = sample_gaussian(n, d, &truth, config.seed)?;
    let split = split_train_val(&data, config.val_fraction, config.seed)?;
    let init = default_init(model, &split.train, mix64(config.seed ^ 0x1417))?;
    let cfg = SolverConfig { record_truth_errors: true, ..config.clone() };
    let em = fit_split(Algorithm::Em, model, &split, &init, &cfg, Some(&truth))?;
    let elu = fit_split(Algorithm::Elu, model, &split, &init, &cfg, Some(&truth))?;
    Ok(FigureData { em, elu })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_examples() {
        let pts: Vec<(f64, f64)> = [1e3, 1e4, 1e5, 1e6].iter().map(|&x: &f64| (x, 7.0 * x.powf(-0.25))).collect();
        let f = fit_loglog_slope(&pts).unwrap();
        assert!((f.slope + 0.25).abs() < 1e-12);
        assert!((f.intercept - 7f64.ln()).abs() < 1e-10);
        assert!(f.stderr < 1e-12);
        let flat = fit_loglog_slope(&[(1.0, 3.0), (2.0, 3.0), (5.0, 3.0)]).unwrap();
        assert!(flat.slope.abs() < 1e-15);
        assert!(fit_loglog_slope(&[(1.0, 1.0), (2.0, 2.0)]).is_err());
        assert!(fit_loglog_slope(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)]).is_err());
    }

    #[test]
    fn child_seeds_differ() {
        let a = child_seed(1, 1000, 0);
        assert_ne!(a, child_seed(1, 1000, 1));
        assert_ne!(a, child_seed(1, 3000, 0));
        assert_ne!(a, child_seed(2, 1000, 0));
        assert_eq!(a, child_seed(1, 1000, 0));
    }

    #[test]
    fn one_coordinate_rule() {
        assert!(one_coordinate(&[0.0, 0.3, 0.01, 0.0]));
        assert!(!one_coordinate(&[0.2, 0.3, 0.0, 0.0]));
        assert!(!one_coordinate(&[0.0, 0.0]));
    }

    #[test]
    fn spec_validation() {
        let ok = SweepSpec {
            model: Model::Isotropic,
            algorithm: Algorithm::Elu,
            d: 1,
            n_grid: vec![100, 200, 400],
            trials_per_n: 1,
            config: SolverConfig::symmetric(),
            master_seed: 0,
        };
        assert!(ok.validate().is_ok());
        assert!(SweepSpec { n_grid: vec![], ..ok.clone() }.validate().is_err());
        assert!(SweepSpec { n_grid: vec![200, 100], ..ok.clone() }.validate().is_err());
        assert!(SweepSpec { trials_per_n: 0, ..ok.clone() }.validate().is_err());
        assert!(run_iteration_scaling(&SweepSpec { n_grid: vec![], ..ok }).is_err());
    }
}
