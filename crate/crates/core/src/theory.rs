//! Numerical audits of the population landscape and of the sample-to-
//! population gradient deviation: homogeneity exponents of the isotropic
//! and diagonal objectives, pseudo-convexity of the diagonal objective,
//! stability scaling in `n` and `r`, and finite-difference gradient checks.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::fit_loglog_slope;
use crate::numeric::{derive_seed, median, norm2};
use crate::objective::{diagonal, general, isotropic};
use crate::params::TruthSpec;
use crate::quadrature::QuadratureRule;
use crate::sampling::{sample_gaussian, standard_normals};
use crate::solvers::Model;

/// Largest allowed `max/min` of a fitted constant across the grid.
pub const VARIATION_LIMIT: f64 = 50.0;
/// Random directions per radius for the isotropic check when `d ≥ 2`.
pub const ISO_DIRECTIONS: usize = 32;
const DIAG_DIRECTIONS: usize = 8;
const ROTATION_TOL: f64 = 1e-10;
/// Slack allowed on convexity and pseudo-convexity margins.
pub const CONVEXITY_TOL: f64 = -1e-10;
const DIRECTION_SEED: u64 = 0xd1_4ec7;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HomogeneityReport {
    pub alpha: f64,
    pub grid: Vec<f64>,
    /// Per radius: largest `‖∇²f‖ / r^α` over directions.
    pub hessian_ratios: Vec<f64>,
    /// Per radius: smallest `‖∇f‖ / (f − f*)^{1 − 1/(α+2)}` over directions.
    pub pl_ratios: Vec<f64>,
    pub hessian_ratio_max: f64,
    pub hessian_ratio_min: f64,
    pub pl_ratio_min: f64,
    pub pl_ratio_max: f64,
    /// Smallest Hessian eigenvalue seen; only audited for the isotropic objective.
    pub min_eigenvalue: Option<f64>,
    /// Largest relative spread of `(f, ‖∇f‖, λ_max)` across directions at one radius.
    pub rotation_max_dev: Option<f64>,
    /// Largest off-axis gradient entry at axis-aligned points.
    pub off_axis_grad_max: Option<f64>,
    pub pass: bool,
}

fn variation(v: &[f64]) -> f64 {
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    hi / lo
}

fn all_positive_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite() && *x > 0.0)
}

fn assemble(alpha: f64, grid: &[f64], hr: Vec<f64>, pr: Vec<f64>) -> HomogeneityReport {
    let ok = all_positive_finite(&hr)
        && all_positive_finite(&pr)
        && variation(&hr) <= VARIATION_LIMIT
        && variation(&pr) <= VARIATION_LIMIT;
    HomogeneityReport {
        alpha,
        grid: grid.to_vec(),
        hessian_ratio_max: hr.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        hessian_ratio_min: hr.iter().cloned().fold(f64::INFINITY, f64::min),
        pl_ratio_min: pr.iter().cloned().fold(f64::INFINITY, f64::min),
        pl_ratio_max: pr.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        hessian_ratios: hr,
        pl_ratios: pr,
        min_eigenvalue: None,
        rotation_max_dev: None,
        off_axis_grad_max: None,
        pass: ok,
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_finite() && alpha > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("alpha must be a positive real, got {alpha}")))
    }
}

/// Audited region: `0 < r ≤ 0.4√d` and `r² < d/3`.
fn check_grid(grid: &[f64], d: usize) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid("radius grid is empty"));
    }
    let df = d as f64;
    for &r in grid {
        if !(r > 0.0 && r <= 0.4 * df.sqrt() && r * r < df / 3.0) {
            return Err(Error::Infeasible(format!("radius {r} lies outside the audited region for d = {d}")));
        }
    }
    Ok(())
}

fn unit_directions(d: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    if d == 1 {
        return vec![vec![1.0], vec![-1.0]];
    }
    standard_normals(seed, count * d)
        .chunks(d)
        .map(|z| {
            let s = norm2(z).sqrt();
            z.iter().map(|v| v / s).collect()
        })
        .collect()
}

fn pl_exponent(alpha: f64) -> f64 {
    1.0 - 1.0 / (alpha + 2.0)
}

fn rel_spread(v: &[f64]) -> f64 {
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    (hi - lo) / hi.abs().max(f64::MIN_POSITIVE)
}

/// Homogeneity of the isotropic population objective at exponent `alpha`.
pub fn check_homogeneity_isotropic(
    d: usize,
    alpha: f64,
    grid: &[f64],
    quad: &QuadratureRule,
) -> Result<HomogeneityReport> {
    check_alpha(alpha)?;
    check_grid(grid, d)?;
    let dirs = unit_directions(d, ISO_DIRECTIONS, DIRECTION_SEED);
    let q = pl_exponent(alpha);
    let mut hr = Vec::with_capacity(grid.len());
    let mut pr = Vec::with_capacity(grid.len());
    let mut min_eig = f64::INFINITY;
    let mut rot = 0.0f64;
    for &r in grid {
        let (mut gaps, mut gnorms, mut lmax) = (Vec::new(), Vec::new(), Vec::new());
        for u in &dirs {
            let theta: Vec<f64> = u.iter().map(|v| r * v).collect();
            let eig = SymmetricEigen::new(isotropic::population_hess_f(&theta, d, quad)?).eigenvalues;
            lmax.push(eig.iter().map(|e| e.abs()).fold(0.0, f64::max));
            min_eig = min_eig.min(eig.min());
            gnorms.push(norm2(&isotropic::population_grad_f(&theta, d, quad)?).sqrt());
            gaps.push(isotropic::population_gap(&theta, d, quad)?);
        }
        rot = rot.max(rel_spread(&gaps)).max(rel_spread(&gnorms)).max(rel_spread(&lmax));
        hr.push(lmax.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / r.powf(alpha));
        pr.push(gnorms.iter().zip(&gaps).map(|(g, f)| g / f.powf(q)).fold(f64::INFINITY, f64::min));
    }
    let mut rep = assemble(alpha, grid, hr, pr);
    rep.pass &= rot <= ROTATION_TOL && min_eig >= CONVEXITY_TOL;
    rep.min_eigenvalue = Some(min_eig);
    rep.rotation_max_dev = Some(rot);
    Ok(rep)
}

/// Central-difference Hessian of the diagonal population gradient.
fn diag_fd_hessian(theta: &[f64], quad: &QuadratureRule, h: f64) -> Result<DMatrix<f64>> {
    let d = theta.len();
    let mut m = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut tp = theta.to_vec();
        let mut tm = theta.to_vec();
        tp[j] += h;
        tm[j] -= h;
        let gp = diagonal::population_grad_f_bar(&tp, quad)?;
        let gm = diagonal::population_grad_f_bar(&tm, quad)?;
        for k in 0..d {
            m[(k, j)] = (gp[k] - gm[k]) / (2.0 * h);
        }
    }
    Ok((&m + m.transpose()) * 0.5)
}

/// Gaussian directions whose second-largest entry has modulus `≥ 0.2`.
fn spread_directions(d: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(count);
    let mut batch = 0u64;
    while out.len() < count {
        for u in unit_directions(d, 4 * count, derive_seed(seed, batch, 0)) {
            let mut mags: Vec<f64> = u.iter().map(|v| v.abs()).collect();
            mags.sort_by(|a, b| b.total_cmp(a));
            if mags[1] >= 0.2 && out.len() < count {
                out.push(u);
            }
        }
        batch += 1;
    }
    out
}

/// Diagonal population objective in `d ≥ 2` dimensions: generic directions
/// (two or more non-negligible entries) against `alpha_general`, and
/// coordinate axes against `alpha_axis` using the axis curvature entry.
pub fn check_homogeneity_diagonal(
    d: usize,
    alpha_general: f64,
    alpha_axis: f64,
    grid: &[f64],
    quad: &QuadratureRule,
) -> Result<(HomogeneityReport, HomogeneityReport)> {
    if d < 2 {
        return Err(Error::invalid("the diagonal check needs d >= 2"));
    }
    check_alpha(alpha_general)?;
    check_alpha(alpha_axis)?;
    check_grid(grid, 1)?;

    let dirs = spread_directions(d, DIAG_DIRECTIONS, DIRECTION_SEED);
    let qg = pl_exponent(alpha_general);
    let (mut hr, mut pr) = (Vec::new(), Vec::new());
    for &r in grid {
        let mut hmax = f64::NEG_INFINITY;
        let mut pmin = f64::INFINITY;
        for u in &dirs {
            let theta: Vec<f64> = u.iter().map(|v| r * v).collect();
            let eig = SymmetricEigen::new(diag_fd_hessian(&theta, quad, 1e-4 * r)?).eigenvalues;
            hmax = hmax.max(eig.iter().map(|e| e.abs()).fold(0.0, f64::max) / r.powf(alpha_general));
            let g = norm2(&diagonal::population_grad_f_bar(&theta, quad)?).sqrt();
            pmin = pmin.min(g / diagonal::population_gap_f_bar(&theta, quad)?.powf(qg));
        }
        hr.push(hmax);
        pr.push(pmin);
    }
    let generic = assemble(alpha_general, grid, hr, pr);

    let qa = pl_exponent(alpha_axis);
    let (mut hr, mut pr) = (Vec::new(), Vec::new());
    let mut off = 0.0f64;
    for &r in grid {
        let mut hmax = f64::NEG_INFINITY;
        let mut pmin = f64::INFINITY;
        for axis in 0..d {
            for sign in [1.0, -1.0] {
                let mut theta = vec![0.0; d];
                theta[axis] = sign * r;
                let g = diagonal::population_grad_f_bar(&theta, quad)?;
                off = g.iter().enumerate().filter(|(i, _)| *i != axis).fold(off, |m, (_, v)| m.max(v.abs()));
                let h = 1e-4 * r;
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[axis] += h;
                tm[axis] -= h;
                let curv = (diagonal::population_grad_f_bar(&tp, quad)?[axis]
                    - diagonal::population_grad_f_bar(&tm, quad)?[axis])
                    / (2.0 * h);
                hmax = hmax.max(curv.abs() / r.powf(alpha_axis));
                pmin = pmin.min(g[axis].abs() / diagonal::population_gap_f_bar(&theta, quad)?.powf(qa));
            }
        }
        hr.push(hmax);
        pr.push(pmin);
    }
    let mut axis = assemble(alpha_axis, grid, hr, pr);
    axis.pass &= off <= 1e-12;
    axis.off_axis_grad_max = Some(off);
    Ok((generic, axis))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PseudoConvexityReport {
    pub d: usize,
    pub trials: usize,
    pub radius: f64,
    /// Smallest `⟨∇f̄(θ), θ − θ*⟩ − (f̄(θ) − f̄(θ*))` seen.
    pub worst_margin: f64,
    pub worst_theta: Vec<f64>,
    pub pass: bool,
}

/// Gap between the two sides of the pseudo-convexity inequality at `θ`
/// (`θ* = 0`); non-negative when it holds.
pub fn pseudo_convexity_margin(theta: &[f64], quad: &QuadratureRule) -> Result<f64> {
    let g = diagonal::population_grad_f_bar(theta, quad)?;
    let inner: f64 = g.iter().zip(theta).map(|(a, b)| a * b).sum();
    Ok(inner - diagonal::population_gap_f_bar(theta, quad)?)
}

/// Points uniform in the `d`-ball of `radius`.
pub fn check_pseudo_convexity(
    d: usize,
    trials: usize,
    radius: f64,
    quad: &QuadratureRule,
    seed: u64,
) -> Result<PseudoConvexityReport> {
    if trials == 0 {
        return Err(Error::invalid("trials must be >= 1"));
    }
    if d == 0 {
        return Err(Error::invalid("d must be >= 1"));
    }
    if !(radius > 0.0 && radius <= 0.3) {
        return Err(Error::invalid(format!("radius must lie in (0, 0.3], got {radius}")));
    }
    let z = standard_normals(seed, trials * d);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1, 0));
    let radii: Vec<f64> = (0..trials).map(|_| radius * rng.gen::<f64>().powf(1.0 / d as f64)).collect();
    let margins: Vec<(f64, usize)> = (0..trials)
        .into_par_iter()
        .map(|k| {
            let u = &z[k * d..(k + 1) * d];
            let s = norm2(u).sqrt();
            let theta: Vec<f64> = u.iter().map(|v| radii[k] * v / s).collect();
            pseudo_convexity_margin(&theta, quad).map(|m| (m, k))
        })
        .collect::<Result<_>>()?;
    let (worst_margin, k) = margins.iter().cloned().fold((f64::INFINITY, 0), |a, b| if b.0 < a.0 { b } else { a });
    let u = &z[k * d..(k + 1) * d];
    let s = norm2(u).sqrt();
    Ok(PseudoConvexityReport {
        d,
        trials,
        radius,
        worst_margin,
        worst_theta: u.iter().map(|v| radii[k] * v / s).collect(),
        pass: worst_margin >= -1e-10,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub d: usize,
    pub gamma_claimed: f64,
    pub radius: f64,
    pub n_grid: Vec<usize>,
    pub probe_count: usize,
    /// `sup_dev[i][t]`: largest probed `‖∇f_n − ∇f‖` for `n_grid[i]`, trial `t`.
    pub sup_dev: Vec<Vec<f64>>,
    pub fitted_n_exponent: f64,
    pub r_grid: Vec<f64>,
    /// Per-radius median over trials at the largest `n`.
    pub sup_dev_r: Vec<f64>,
    pub fitted_r_exponent: Option<f64>,
}

/// Probe points for the ball of radius `r`: the first half on the sphere,
/// the rest uniform inside.
fn probes(d: usize, r: f64, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let z = standard_normals(seed, count * d);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2, 0));
    (0..count)
        .map(|k| {
            let u = &z[k * d..(k + 1) * d];
            let s = norm2(u).sqrt();
            let rad = if k < count.div_ceil(2) { r } else { r * rng.gen::<f64>().powf(1.0 / d as f64) };
            u.iter().map(|v| rad * v / s).collect()
        })
        .collect()
}

fn sup_deviation(
    data: &crate::sampling::Dataset,
    points: &[Vec<f64>],
    quad: &QuadratureRule,
) -> Result<f64> {
    let cache = isotropic::MomentCache::new(data)?;
    let d = data.d();
    let mut sup = 0.0f64;
    for theta in points {
        let gs = isotropic::grad_f_n(theta, data, &cache)?;
        let gp = isotropic::population_grad_f(theta, d, quad)?;
        let dev: f64 = gs.iter().zip(&gp).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        sup = sup.max(dev);
    }
    Ok(sup)
}

/// Deviation of the sample gradient from the population gradient over a
/// ball: scaling in `n` at radius `r`, and in the radius over `r_grid` at
/// the largest `n` (skipped when `r_grid` has fewer than three radii).
#[allow(clippy::too_many_arguments)]
pub fn check_stability_scaling(
    d: usize,
    r: f64,
    n_grid: &[usize],
    trials: usize,
    probe_count: usize,
    quad: &QuadratureRule,
    seed: u64,
    r_grid: &[f64],
) -> Result<StabilityReport> {
    if trials == 0 || probe_count == 0 {
        return Err(Error::invalid("trials and probe_count must be >= 1"));
    }
    if n_grid.len() < 3 || n_grid.windows(2).any(|w| w[0] >= w[1]) || n_grid[0] == 0 {
        return Err(Error::invalid("n_grid needs >= 3 strictly increasing positive counts"));
    }
    check_grid(&[r], d)?;
    if !r_grid.is_empty() {
        check_grid(r_grid, d)?;
        if r_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("r_grid must be strictly increasing"));
        }
    }
    let truth = TruthSpec::standard(d);
    let cells: Vec<(usize, usize)> = n_grid.iter().flat_map(|&n| (0..trials).map(move |t| (n, t))).collect();
    let main_probes = probes(d, r, probe_count, derive_seed(seed, 0, 1));
    let devs: Vec<f64> = cells
        .par_iter()
        .map(|&(n, t)| {
            let data = sample_gaussian(n, d, &truth, derive_seed(seed, n as u64, t as u64))?;
            sup_deviation(&data, &main_probes, quad)
        })
        .collect::<Result<_>>()?;
    let sup_dev: Vec<Vec<f64>> = devs.chunks(trials).map(<[f64]>::to_vec).collect();
    let n_pts: Vec<(f64, f64)> = n_grid.iter().zip(&sup_dev).map(|(&n, v)| (n as f64, median(v))).collect();
    let fitted_n_exponent = fit_loglog_slope(&n_pts)?.slope;

    let mut sup_dev_r = Vec::new();
    let mut fitted_r_exponent = None;
    if !r_grid.is_empty() {
        let n = *n_grid.last().unwrap();
        let per_trial: Vec<Vec<f64>> = (0..trials)
            .into_par_iter()
            .map(|t| {
                let data = sample_gaussian(n, d, &truth, derive_seed(seed, n as u64, t as u64))?;
                r_grid
                    .iter()
                    .enumerate()
                    .map(|(i, &rr)| sup_deviation(&data, &probes(d, rr, probe_count, derive_seed(seed, i as u64, 2)), quad))
                    .collect()
            })
            .collect::<Result<_>>()?;
        sup_dev_r = (0..r_grid.len()).map(|i| median(&per_trial.iter().map(|v| v[i]).collect::<Vec<_>>())).collect();
        if r_grid.len() >= 3 {
            let pts: Vec<(f64, f64)> = r_grid.iter().cloned().zip(sup_dev_r.iter().cloned()).collect();
            fitted_r_exponent = Some(fit_loglog_slope(&pts)?.slope);
        }
    }
    Ok(StabilityReport {
        d,
        gamma_claimed: 1.0,
        radius: r,
        n_grid: n_grid.to_vec(),
        probe_count,
        sup_dev,
        fitted_n_exponent,
        r_grid: r_grid.to_vec(),
        sup_dev_r,
        fitted_r_exponent,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub objective_id: Model,
    pub d: usize,
    pub trials: usize,
    /// Largest `‖g_fd − g‖_∞ / max(‖g‖_∞, 1e-3)` over trials. Below the floor
    /// the error is absolute, since a central difference of an `O(1)`
    /// objective has rounding noise near `ε|f|/h`.
    pub worst_rel_error: f64,
    pub step: f64,
}

const GRADCHECK_N: usize = 200;

fn central_diff(f: &dyn Fn(&[f64]) -> Result<f64>, x: &[f64], h: f64) -> Result<Vec<f64>> {
    (0..x.len())
        .map(|j| {
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            p[j] += h;
            m[j] -= h;
            Ok((f(&p)? - f(&m)?) / (2.0 * h))
        })
        .collect()
}

const GRADCHECK_FLOOR: f64 = 1e-3;

fn rel_error(fd: &[f64], g: &[f64]) -> f64 {
    let scale = g.iter().map(|v| v.abs()).fold(0.0, f64::max).max(GRADCHECK_FLOOR);
    fd.iter().zip(g).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale
}

/// Analytical gradients of the profiled objectives against central finite
/// differences at random feasible points, on `N(0, I)` data of size 200.
pub fn gradcheck(objective_id: Model, d: usize, trials: usize, h: f64, seed: u64) -> Result<GradCheckReport> {
    if !(1e-8..=1e-4).contains(&h) {
        return Err(Error::invalid(format!("step must lie in [1e-8, 1e-4], got {h}")));
    }
    if trials == 0 || d == 0 {
        return Err(Error::invalid("trials and d must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for t in 0..trials {
        let data = sample_gaussian(GRADCHECK_N, d, &TruthSpec::standard(d), derive_seed(seed, t as u64, 3))?;
        let mut point = |scale: f64| -> Vec<f64> { (0..d).map(|_| scale * (2.0 * rng.gen::<f64>() - 1.0)).collect() };
        let err = match objective_id {
            Model::Isotropic => {
                let c = isotropic::MomentCache::new(&data)?;
                let theta = point(0.4);
                let g = isotropic::grad_f_n(&theta, &data, &c)?;
                rel_error(&central_diff(&|x| isotropic::f_n(x, &data, &c), &theta, h)?, &g)
            }
            Model::Diagonal => {
                let c = diagonal::DiagonalMomentCache::new(&data)?;
                let theta = point(0.4);
                let g = diagonal::grad_f_bar_n(&theta, &data, &c)?;
                rel_error(&central_diff(&|x| diagonal::f_bar_n(x, &data, &c), &theta, h)?, &g)
            }
            Model::General => {
                let c = general::GeneralMomentCache::new(&data)?;
                let mut both = point(0.5);
                both.extend(point(0.5));
                let f = |x: &[f64]| general::f_tilde_n(&x[..d], &x[d..], &data, &c);
                let (g1, g2) = general::grad_f_tilde_n(&both[..d], &both[d..], &data, &c)?;
                let g: Vec<f64> = g1.into_iter().chain(g2).collect();
                rel_error(&central_diff(&f, &both, h)?, &g)
            }
        };
        worst = worst.max(err);
    }
    Ok(GradCheckReport { objective_id, d, trials, worst_rel_error: worst, step: h })
}

/// `{0.05, 0.10, …, 0.40}`.
pub fn default_grid() -> Vec<f64> {
    (1..=8).map(|k| 0.05 * k as f64).collect()
}
