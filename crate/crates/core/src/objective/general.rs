//! Two free locations with a shared isotropic variance:
//! `½N(θ₁, σ²I) + ½N(θ₂, σ²I)`.

use crate::error::{check_dim, Error, Result};
use crate::numeric::{dot, logistic, lse2, norm2, tree_reduce};
use crate::params::GeneralParams;
use crate::sampling::Dataset;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `sum_sq = (1/(nd)) Σ‖X_i‖²` and the sample mean.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralMomentCache {
    pub sum_sq: f64,
    pub mean: Vec<f64>,
}

impl GeneralMomentCache {
    pub fn new(data: &Dataset) -> Result<Self> {
        let d = data.d();
        let mut acc = vec![0.0; d + 1];
        tree_reduce(
            data.n(),
            &|i, a: &mut [f64]| {
                let x = data.row(i);
                a[0] += norm2(x);
                for (aj, xj) in a[1..].iter_mut().zip(x) {
                    *aj += xj;
                }
            },
            &mut acc,
        );
        let inv_n = 1.0 / data.n() as f64;
        let sum_sq = acc[0] * inv_n / d as f64;
        if !(sum_sq > 0.0) {
            return Err(Error::invalid("second moment of the data is zero"));
        }
        Ok(Self { sum_sq, mean: acc[1..].iter().map(|v| v * inv_n).collect() })
    }
}

#[inline]
fn sq_dist(x: &[f64], t: &[f64]) -> f64 {
    x.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Posterior weight of the `θ₂` component given `z = (q₁ − q₂)/(2σ²)`.
/// Written so that `weight(z) + weight(−z) == 1` exactly.
#[inline]
fn weight(z: f64) -> f64 {
    if z > 0.0 {
        1.0 - logistic(-z)
    } else {
        logistic(z)
    }
}

/// `P(component 2 | x) = 1/(1 + exp((‖x−θ₂‖² − ‖x−θ₁‖²)/(2σ²)))`.
pub fn responsibilities(params: &GeneralParams, x: &[f64]) -> Result<f64> {
    check_sigma2(params.sigma2)?;
    check_dim(params.dim(), x.len())?;
    let z = (sq_dist(x, &params.theta1) - sq_dist(x, &params.theta2)) / (2.0 * params.sigma2);
    Ok(weight(z))
}

fn check_sigma2(sigma2: f64) -> Result<()> {
    if sigma2.is_finite() && sigma2 > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("sigma2 must be > 0, got {sigma2}")))
    }
}

/// One-pass sufficient statistics at `(θ₁, θ₂, σ²)`; `ω` is the weight of `θ₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralMoments {
    pub lse: f64,
    /// `mean (1 − ω)`, `mean ω`
    pub w1: f64,
    pub w2: f64,
    /// `mean (1 − ω) X`, `mean ω X`
    pub wx1: Vec<f64>,
    pub wx2: Vec<f64>,
    /// `mean [(1 − ω) q₁ + ω q₂]`
    pub wq: f64,
    /// `mean ‖X‖²`
    pub sq: f64,
}

pub fn moments(theta1: &[f64], theta2: &[f64], sigma2: f64, data: &Dataset) -> Result<GeneralMoments> {
    let d = data.d();
    check_dim(d, theta1.len())?;
    check_dim(d, theta2.len())?;
    let inv2 = 1.0 / (2.0 * sigma2);
    let mut acc = vec![0.0; 2 * d + 5];
    tree_reduce(
        data.n(),
        &|i, a: &mut [f64]| {
            let x = data.row(i);
            let q1 = sq_dist(x, theta1);
            let q2 = sq_dist(x, theta2);
            let z = (q1 - q2) * inv2;
            let (r1, r2) = (weight(-z), weight(z));
            a[0] += lse2(-q1 * inv2, -q2 * inv2);
            a[1] += r1;
            a[2] += r2;
            a[3] += r1 * q1 + r2 * q2;
            a[4] += norm2(x);
            for j in 0..d {
                a[5 + j] += r1 * x[j];
                a[5 + d + j] += r2 * x[j];
            }
        },
        &mut acc,
    );
    let inv_n = 1.0 / data.n() as f64;
    Ok(GeneralMoments {
        lse: acc[0] * inv_n,
        w1: acc[1] * inv_n,
        w2: acc[2] * inv_n,
        wq: acc[3] * inv_n,
        sq: acc[4] * inv_n,
        wx1: acc[5..5 + d].iter().map(|v| v * inv_n).collect(),
        wx2: acc[5 + d..].iter().map(|v| v * inv_n).collect(),
    })
}

pub(crate) fn nll_from(m: &GeneralMoments, sigma2: f64, d: usize) -> f64 {
    std::f64::consts::LN_2 + 0.5 * d as f64 * (LN_2PI + sigma2.ln()) - m.lse
}

pub fn neg_loglik_general(params: &GeneralParams, data: &Dataset) -> Result<f64> {
    check_sigma2(params.sigma2)?;
    let m = moments(&params.theta1, &params.theta2, params.sigma2, data)?;
    Ok(nll_from(&m, params.sigma2, data.d()))
}

/// `(1/(nd)) Σ‖X_i − m‖² − ‖θ₁ − θ₂‖²/(4d)` with `m = ½(θ₁ + θ₂)`.
pub fn profile_sigma2_general(theta1: &[f64], theta2: &[f64], cache: &GeneralMomentCache) -> Result<f64> {
    let d = cache.mean.len();
    check_dim(d, theta1.len())?;
    check_dim(d, theta2.len())?;
    let df = d as f64;
    let mid: Vec<f64> = theta1.iter().zip(theta2).map(|(a, b)| 0.5 * (a + b)).collect();
    let gap2 = sq_dist(theta1, theta2);
    let s2 = cache.sum_sq - 2.0 * dot(&cache.mean, &mid) / df + norm2(&mid) / df - gap2 / (4.0 * df);
    if s2 > 0.0 {
        Ok(s2)
    } else {
        Err(Error::Infeasible(format!("profiled variance {s2} is not positive")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneralEval {
    pub sigma2: f64,
    pub value: f64,
    pub grad1: Vec<f64>,
    pub grad2: Vec<f64>,
}

pub fn eval_f_tilde_n(
    theta1: &[f64],
    theta2: &[f64],
    data: &Dataset,
    cache: &GeneralMomentCache,
) -> Result<GeneralEval> {
    let sigma2 = profile_sigma2_general(theta1, theta2, cache)?;
    let m = moments(theta1, theta2, sigma2, data)?;
    Ok(profiled_from(&m, theta1, theta2, sigma2, cache))
}

pub(crate) fn profiled_from(
    m: &GeneralMoments,
    theta1: &[f64],
    theta2: &[f64],
    sigma2: f64,
    cache: &GeneralMomentCache,
) -> GeneralEval {
    let d = theta1.len();
    let df = d as f64;
    let value = nll_from(m, sigma2, d);
    let dl_ds = 0.5 * df / sigma2 - m.wq / (2.0 * sigma2 * sigma2);
    let mut grad1 = Vec::with_capacity(d);
    let mut grad2 = Vec::with_capacity(d);
    for j in 0..d {
        let (a, b) = (theta1[j], theta2[j]);
        let centred = (cache.mean[j] - 0.5 * (a + b)) / df;
        let spread = (a - b) / (2.0 * df);
        let dl1 = -(m.wx1[j] - a * m.w1) / sigma2;
        let dl2 = -(m.wx2[j] - b * m.w2) / sigma2;
        grad1.push(dl1 + dl_ds * (-centred - spread));
        grad2.push(dl2 + dl_ds * (-centred + spread));
    }
    GeneralEval { sigma2, value, grad1, grad2 }
}

/// `f̃_n(θ₁, θ₂) = L̃_n(θ₁, θ₂, σ̃²(θ₁, θ₂))`.
pub fn f_tilde_n(theta1: &[f64], theta2: &[f64], data: &Dataset, cache: &GeneralMomentCache) -> Result<f64> {
    Ok(eval_f_tilde_n(theta1, theta2, data, cache)?.value)
}

pub fn grad_f_tilde_n(
    theta1: &[f64],
    theta2: &[f64],
    data: &Dataset,
    cache: &GeneralMomentCache,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let e = eval_f_tilde_n(theta1, theta2, data, cache)?;
    Ok((e.grad1, e.grad2))
}
