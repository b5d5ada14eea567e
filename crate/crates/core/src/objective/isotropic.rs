//! Symmetric isotropic model `½N(−θ, σ²I) + ½N(θ, σ²I)`.
//!
//! Sample-level pieces share one fused pass over the data ([`moments`]);
//! population-level pieces assume `X ~ N(0, I_d)` and reduce, after a
//! rotation taking `θ` to `‖θ‖e₁`, to 1-D expectations over `V ~ N(0, 1)`.

use nalgebra::DMatrix;

use crate::error::{check_dim, Error, Result};
use crate::numeric::{dot, log_cosh, lse_tanh, norm2, sech2, tree_reduce};
use crate::params::IsotropicParams;
use crate::quadrature::QuadratureRule;
use crate::sampling::Dataset;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// The pooled second moment `a_n = (1/(nd)) Σ‖X_i‖²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentCache {
    pub a_n: f64,
    pub n: usize,
    pub d: usize,
}

impl MomentCache {
    pub fn new(data: &Dataset) -> Result<Self> {
        let mut acc = [0.0];
        tree_reduce(data.n(), &|i, a: &mut [f64]| a[0] += norm2(data.row(i)), &mut acc);
        let a_n = acc[0] / (data.n() * data.d()) as f64;
        if !(a_n > 0.0) {
            return Err(Error::invalid("second moment of the data is zero"));
        }
        Ok(Self { a_n, n: data.n(), d: data.d() })
    }
}

/// Sample averages gathered in one pass at `(θ, σ²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMoments {
    /// `mean ‖X_i‖²`
    pub sq: f64,
    /// `mean log(e^{w_i} + e^{−w_i})`, `w_i = X_iᵀθ/σ²`
    pub lse: f64,
    /// `mean tanh(w_i) X_iᵀθ`
    pub tanh_proj: f64,
    /// `mean tanh(w_i) X_i`
    pub tanh_x: Vec<f64>,
}

pub fn moments(theta: &[f64], sigma2: f64, data: &Dataset) -> Result<SampleMoments> {
    check_dim(data.d(), theta.len())?;
    let d = data.d();
    let inv = 1.0 / sigma2;
    let mut acc = vec![0.0; d + 3];
    tree_reduce(
        data.n(),
        &|i, a: &mut [f64]| {
            let x = data.row(i);
            let proj = dot(x, theta);
            let (lse, t) = lse_tanh(proj * inv);
            a[0] += norm2(x);
            a[1] += lse;
            a[2] += t * proj;
            for (aj, xj) in a[3..].iter_mut().zip(x) {
                *aj += t * xj;
            }
        },
        &mut acc,
    );
    let inv_n = 1.0 / data.n() as f64;
    for v in acc.iter_mut() {
        *v *= inv_n;
    }
    Ok(SampleMoments { sq: acc[0], lse: acc[1], tanh_proj: acc[2], tanh_x: acc[3..].to_vec() })
}

fn check_sigma2(sigma2: f64) -> Result<()> {
    if sigma2.is_finite() && sigma2 > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("sigma2 must be > 0, got {sigma2}")))
    }
}

/// `−(1/n) Σ log(½φ(X_i; θ, σ²I) + ½φ(X_i; −θ, σ²I))`.
pub fn neg_loglik(params: &IsotropicParams, data: &Dataset) -> Result<f64> {
    check_sigma2(params.sigma2)?;
    let m = moments(&params.theta, params.sigma2, data)?;
    Ok(nll_from(&m, &params.theta, params.sigma2, data.d()))
}

pub(crate) fn nll_from(m: &SampleMoments, theta: &[f64], sigma2: f64, d: usize) -> f64 {
    let d = d as f64;
    std::f64::consts::LN_2 + 0.5 * d * (LN_2PI + sigma2.ln()) + (m.sq + norm2(theta)) / (2.0 * sigma2)
        - m.lse
}

/// Profiled variance `a_n − ‖θ‖²/d`, the exact minimizer over `σ²` at fixed `θ`.
pub fn moment_sigma2(theta: &[f64], cache: &MomentCache) -> Result<f64> {
    check_dim(cache.d, theta.len())?;
    let s2 = cache.a_n - norm2(theta) / cache.d as f64;
    if s2 > 0.0 {
        Ok(s2)
    } else {
        Err(Error::Infeasible(format!(
            "‖θ‖²/d = {} reaches a_n = {}",
            norm2(theta) / cache.d as f64,
            cache.a_n
        )))
    }
}

/// Value and gradient of the profiled objective `f_n` at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfiledEval {
    pub sigma2: f64,
    pub value: f64,
    pub grad: Vec<f64>,
}

pub fn eval_f_n(theta: &[f64], data: &Dataset, cache: &MomentCache) -> Result<ProfiledEval> {
    let sigma2 = moment_sigma2(theta, cache)?;
    let m = moments(theta, sigma2, data)?;
    Ok(profiled_from(&m, theta, sigma2, cache))
}

pub(crate) fn profiled_from(
    m: &SampleMoments,
    theta: &[f64],
    sigma2: f64,
    cache: &MomentCache,
) -> ProfiledEval {
    let d = cache.d as f64;
    let s = norm2(theta);
    let value = std::f64::consts::LN_2 + 0.5 * d * (LN_2PI + sigma2.ln())
        + (d * cache.a_n + s) / (2.0 * sigma2)
        - m.lse;
    let inv4 = 1.0 / (sigma2 * sigma2);
    let lead = cache.a_n + s / d;
    let cross = 2.0 * m.tanh_proj / d;
    let grad = theta
        .iter()
        .zip(&m.tanh_x)
        .map(|(t, tx)| (t * lead - tx * sigma2 - cross * t) * inv4)
        .collect();
    ProfiledEval { sigma2, value, grad }
}

/// `f_n(θ) = L_n(θ, a_n − ‖θ‖²/d)`.
pub fn f_n(theta: &[f64], data: &Dataset, cache: &MomentCache) -> Result<f64> {
    Ok(eval_f_n(theta, data, cache)?.value)
}

/// Total derivative of `f_n`, including the path through the profiled `σ²`.
pub fn grad_f_n(theta: &[f64], data: &Dataset, cache: &MomentCache) -> Result<Vec<f64>> {
    Ok(eval_f_n(theta, data, cache)?.grad)
}

// ---------------------------------------------------------------------------
// Population landscape, X ~ N(0, I_d)

/// Radial quantities shared by the population functions.
struct Radial {
    r: f64,
    s: f64,
    sigma2: f64,
    u: f64,
    a: f64,
}

fn radial(theta: &[f64], d: usize) -> Result<Radial> {
    check_dim(d, theta.len())?;
    let s = norm2(theta);
    let df = d as f64;
    if !(s < df) {
        return Err(Error::Infeasible(format!("population objective needs ‖θ‖² < d, got {s}")));
    }
    let sigma2 = 1.0 - s / df;
    let r = s.sqrt();
    Ok(Radial { r, s, sigma2, u: r / sigma2, a: (1.0 + s / df) / (sigma2 * sigma2) })
}

/// `f(θ) − f(0)`, computed without the `O(1)` constant so small gaps keep
/// their relative precision.
pub fn population_gap(theta: &[f64], d: usize, quad: &QuadratureRule) -> Result<f64> {
    let p = radial(theta, d)?;
    let df = d as f64;
    let elc = quad.expect(|v| log_cosh(p.u * v));
    Ok(0.5 * df * (-p.s / df).ln_1p() + p.s / p.sigma2 - elc)
}

pub fn population_f(theta: &[f64], d: usize, quad: &QuadratureRule) -> Result<f64> {
    let gap = population_gap(theta, d, quad)?;
    Ok(0.5 * d as f64 * (LN_2PI + 1.0) + gap)
}

/// `g'(r)/r` so that `∇f = θ · g'(r)/r`; zero at `θ = 0`.
fn radial_slope(p: &Radial, quad: &QuadratureRule) -> f64 {
    if p.r == 0.0 {
        return 0.0;
    }
    let evt = quad.expect(|v| v * (p.u * v).tanh());
    p.a * (1.0 - evt / p.r)
}

pub fn population_grad_f(theta: &[f64], d: usize, quad: &QuadratureRule) -> Result<Vec<f64>> {
    let p = radial(theta, d)?;
    let lambda0 = radial_slope(&p, quad);
    Ok(theta.iter().map(|t| t * lambda0).collect())
}

/// Eigen-decomposition parameters of `∇²f = λ₀I + λ₁θθᵀ`, and the radial
/// curvature `g''(r) = λ₀ + λ₁‖θ‖²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HessianParts {
    pub lambda0: f64,
    pub lambda1: f64,
    pub radial: f64,
}

pub fn population_hess_parts(theta: &[f64], d: usize, quad: &QuadratureRule) -> Result<HessianParts> {
    let p = radial(theta, d)?;
    let df = d as f64;
    if p.r == 0.0 {
        // g''(0) = A(0)(1 − E[V²]) = 0 with A(0) = 1; the θθᵀ term vanishes.
        let curv = 1.0 - quad.expect(|v| v * v);
        return Ok(HessianParts { lambda0: curv, lambda1: 0.0, radial: curv });
    }
    let evt = quad.expect(|v| v * (p.u * v).tanh());
    let ev2s = quad.expect(|v| v * v * sech2(p.u * v));
    let inv2 = 1.0 / p.sigma2;
    let da = (2.0 * p.r / df) * inv2 * inv2 + (1.0 + p.s / df) * (4.0 * p.r / df) * inv2 * inv2 * inv2;
    let g2 = da * (p.r - evt) + p.a * (1.0 - p.a * ev2s);
    let lambda0 = p.a * (1.0 - evt / p.r);
    Ok(HessianParts { lambda0, lambda1: (g2 - lambda0) / p.s, radial: g2 })
}

/// Assembled `d × d` Hessian (a `1 × 1` matrix holding `f''` when `d = 1`).
pub fn population_hess_f(theta: &[f64], d: usize, quad: &QuadratureRule) -> Result<DMatrix<f64>> {
    let h = population_hess_parts(theta, d, quad)?;
    if d == 1 {
        return Ok(DMatrix::from_element(1, 1, h.radial));
    }
    Ok(DMatrix::from_fn(d, d, |i, j| {
        let diag = if i == j { h.lambda0 } else { 0.0 };
        diag + h.lambda1 * theta[i] * theta[j]
    }))
}
