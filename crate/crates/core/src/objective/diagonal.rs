//! Symmetric model with per-coordinate variances `diag(σ_1², …, σ_d²)`.
//!
//! At the population level (`X ~ N(0, I_d)`, profiled `σ_j² = 1 − θ_j²`)
//! the statistic `Σ_l X_l θ_l/(1 − θ_l²)` is `N(0, s²)`, so every
//! expectation is again a 1-D quadrature in `s`.

use crate::error::{check_dim, Error, Result};
use crate::numeric::{log_cosh, lse_tanh, sech2, tree_reduce};
use crate::params::DiagonalParams;
use crate::quadrature::QuadratureRule;
use crate::sampling::Dataset;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Per-coordinate second moments `m2_j = (1/n) Σ X_ij²`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalMomentCache {
    pub m2: Vec<f64>,
}

impl DiagonalMomentCache {
    pub fn new(data: &Dataset) -> Result<Self> {
        let d = data.d();
        let mut acc = vec![0.0; d];
        tree_reduce(
            data.n(),
            &|i, a: &mut [f64]| {
                for (aj, x) in a.iter_mut().zip(data.row(i)) {
                    *aj += x * x;
                }
            },
            &mut acc,
        );
        let inv_n = 1.0 / data.n() as f64;
        let m2: Vec<f64> = acc.iter().map(|v| v * inv_n).collect();
        if let Some(j) = m2.iter().position(|v| !(*v > 0.0)) {
            return Err(Error::invalid(format!("second moment of coordinate {j} is zero")));
        }
        Ok(Self { m2 })
    }
}

/// One-pass sample averages at `(θ, σ²)` with `w_i = Σ_j X_ij θ_j/σ_j²`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalMoments {
    /// `mean X_ij²` per coordinate
    pub sq: Vec<f64>,
    pub lse: f64,
    /// `mean tanh(w_i) X_ij`
    pub tanh_x: Vec<f64>,
}

pub fn moments(theta: &[f64], sigma2: &[f64], data: &Dataset) -> Result<DiagonalMoments> {
    let d = data.d();
    check_dim(d, theta.len())?;
    check_dim(d, sigma2.len())?;
    let coef: Vec<f64> = theta.iter().zip(sigma2).map(|(t, s)| t / s).collect();
    let mut acc = vec![0.0; 2 * d + 1];
    tree_reduce(
        data.n(),
        &|i, a: &mut [f64]| {
            let x = data.row(i);
            let w: f64 = x.iter().zip(&coef).map(|(x, c)| x * c).sum();
            let (lse, t) = lse_tanh(w);
            a[0] += lse;
            for j in 0..d {
                a[1 + j] += x[j] * x[j];
                a[1 + d + j] += t * x[j];
            }
        },
        &mut acc,
    );
    let inv_n = 1.0 / data.n() as f64;
    Ok(DiagonalMoments {
        lse: acc[0] * inv_n,
        sq: acc[1..=d].iter().map(|v| v * inv_n).collect(),
        tanh_x: acc[1 + d..].iter().map(|v| v * inv_n).collect(),
    })
}

pub(crate) fn nll_from(m: &DiagonalMoments, theta: &[f64], sigma2: &[f64]) -> f64 {
    let d = theta.len() as f64;
    let mut quad = 0.0;
    for j in 0..theta.len() {
        quad += 0.5 * sigma2[j].ln() + (m.sq[j] + theta[j] * theta[j]) / (2.0 * sigma2[j]);
    }
    std::f64::consts::LN_2 + 0.5 * d * LN_2PI + quad - m.lse
}

pub fn neg_loglik_diag(params: &DiagonalParams, data: &Dataset) -> Result<f64> {
    if let Some(j) = params.sigma2.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::invalid(format!("sigma2[{j}] must be > 0, got {}", params.sigma2[j])));
    }
    let m = moments(&params.theta, &params.sigma2, data)?;
    Ok(nll_from(&m, &params.theta, &params.sigma2))
}

/// `σ_j² = m2_j − θ_j²`.
pub fn profile_sigma2_diag(theta: &[f64], cache: &DiagonalMomentCache) -> Result<Vec<f64>> {
    check_dim(cache.m2.len(), theta.len())?;
    let mut out = Vec::with_capacity(theta.len());
    for (j, (&m, &t)) in cache.m2.iter().zip(theta).enumerate() {
        let v = m - t * t;
        if !(v > 0.0) {
            return Err(Error::Infeasible(format!(
                "coordinate {j}: θ_j² = {} reaches m2_j = {m}",
                t * t
            )));
        }
        out.push(v);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalEval {
    pub sigma2: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
}

pub fn eval_f_bar_n(theta: &[f64], data: &Dataset, cache: &DiagonalMomentCache) -> Result<DiagonalEval> {
    let sigma2 = profile_sigma2_diag(theta, cache)?;
    let m = moments(theta, &sigma2, data)?;
    Ok(profiled_from(&m, theta, sigma2, cache))
}

pub(crate) fn profiled_from(
    m: &DiagonalMoments,
    theta: &[f64],
    sigma2: Vec<f64>,
    cache: &DiagonalMomentCache,
) -> DiagonalEval {
    let d = theta.len() as f64;
    let mut value = std::f64::consts::LN_2 + 0.5 * d * LN_2PI - m.lse;
    let mut grad = Vec::with_capacity(theta.len());
    for j in 0..theta.len() {
        let (t, mj, s) = (theta[j], cache.m2[j], sigma2[j]);
        value += 0.5 * s.ln() + (mj + t * t) / (2.0 * s);
        grad.push((mj + t * t) / (s * s) * (t - m.tanh_x[j]));
    }
    DiagonalEval { sigma2, value, grad }
}

pub fn f_bar_n(theta: &[f64], data: &Dataset, cache: &DiagonalMomentCache) -> Result<f64> {
    Ok(eval_f_bar_n(theta, data, cache)?.value)
}

pub fn grad_f_bar_n(theta: &[f64], data: &Dataset, cache: &DiagonalMomentCache) -> Result<Vec<f64>> {
    Ok(eval_f_bar_n(theta, data, cache)?.grad)
}

// ---------------------------------------------------------------------------
// Population landscape

fn population_scale(theta: &[f64]) -> Result<f64> {
    let mut s2 = 0.0;
    for (j, &t) in theta.iter().enumerate() {
        if !(t.abs() < 1.0) {
            return Err(Error::Infeasible(format!("population objective needs |θ_{j}| < 1, got {t}")));
        }
        let a = t / (1.0 - t * t);
        s2 += a * a;
    }
    Ok(s2.sqrt())
}

/// `f̄(θ) − f̄(0)`.
pub fn population_gap_f_bar(theta: &[f64], quad: &QuadratureRule) -> Result<f64> {
    let s = population_scale(theta)?;
    let mut gap = 0.0;
    for &t in theta {
        let t2 = t * t;
        gap += 0.5 * (-t2).ln_1p() + t2 / (1.0 - t2);
    }
    Ok(gap - quad.expect(|v| log_cosh(s * v)))
}

pub fn population_f_bar(theta: &[f64], quad: &QuadratureRule) -> Result<f64> {
    let d = theta.len() as f64;
    Ok(0.5 * d * (LN_2PI + 1.0) + population_gap_f_bar(theta, quad)?)
}

pub fn population_grad_f_bar(theta: &[f64], quad: &QuadratureRule) -> Result<Vec<f64>> {
    let s = population_scale(theta)?;
    let es2 = quad.expect(|v| sech2(s * v));
    Ok(theta
        .iter()
        .map(|&t| {
            let o = 1.0 - t * t;
            t * (1.0 + t * t) / (o * o * o) * (o - es2)
        })
        .collect())
}
