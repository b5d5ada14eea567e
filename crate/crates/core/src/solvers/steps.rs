//! Single EM and ELU updates. The `*_from` helpers take moments already
//! gathered at the current iterate so the fitting loop needs one data
//! pass per step.

use super::SolverConfig;
use crate::error::{Error, Result};
use crate::numeric::norm2;
use crate::objective::diagonal::{self, DiagonalMomentCache, DiagonalMoments};
use crate::objective::general::{self, GeneralMomentCache, GeneralMoments};
use crate::objective::isotropic::{self, MomentCache, SampleMoments};
use crate::params::{DiagonalParams, GeneralParams, IsotropicParams};
use crate::sampling::Dataset;

fn check_finite(v: &[f64], what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub(crate) fn gradient_step(theta: &[f64], grad: &[f64], multiplier: f64) -> Result<Vec<f64>> {
    check_finite(grad, "gradient")?;
    let next: Vec<f64> = theta.iter().zip(grad).map(|(t, g)| t - multiplier * g).collect();
    check_finite(&next, "location update")?;
    Ok(next)
}

// --- isotropic ------------------------------------------------------------

pub(crate) fn em_isotropic_from(m: &SampleMoments, cache: &MomentCache) -> Result<IsotropicParams> {
    check_finite(&m.tanh_x, "EM location update")?;
    let theta = m.tanh_x.clone();
    let sigma2 = isotropic::moment_sigma2(&theta, cache)?;
    Ok(IsotropicParams { theta, sigma2 })
}

/// `θ⁺ = (1/n) Σ X_i tanh(X_iᵀθ/σ²)`, then `σ²⁺ = a_n − ‖θ⁺‖²/d`.
pub fn em_step_isotropic(
    params: &IsotropicParams,
    data: &Dataset,
    cache: &MomentCache,
) -> Result<IsotropicParams> {
    if !(params.sigma2 > 0.0) {
        return Err(Error::invalid("sigma2 must be > 0"));
    }
    let m = isotropic::moments(&params.theta, params.sigma2, data)?;
    em_isotropic_from(&m, cache)
}

/// `θ^{t+1} = θ^t − η β^{−t} ∇f_n(θ^t)`, `σ²^{t+1} = a_n − ‖θ^{t+1}‖²/d`.
pub fn elu_step_isotropic(
    theta: &[f64],
    t: usize,
    config: &SolverConfig,
    data: &Dataset,
    cache: &MomentCache,
) -> Result<(Vec<f64>, f64)> {
    let grad = isotropic::grad_f_n(theta, data, cache)?;
    let next = gradient_step(theta, &grad, config.step_multiplier(t))?;
    let sigma2 = isotropic::moment_sigma2(&next, cache)?;
    Ok((next, sigma2))
}

// --- diagonal -------------------------------------------------------------

pub(crate) fn em_diagonal_from(m: &DiagonalMoments, cache: &DiagonalMomentCache) -> Result<DiagonalParams> {
    check_finite(&m.tanh_x, "EM location update")?;
    let theta = m.tanh_x.clone();
    let sigma2 = diagonal::profile_sigma2_diag(&theta, cache)?;
    Ok(DiagonalParams { theta, sigma2 })
}

/// `θ_j⁺ = (1/n) Σ X_ij tanh(Σ_l X_il θ_l/σ_l²)`, `σ_j²⁺ = m2_j − (θ_j⁺)²`.
pub fn em_step_diagonal(
    params: &DiagonalParams,
    data: &Dataset,
    cache: &DiagonalMomentCache,
) -> Result<DiagonalParams> {
    if params.sigma2.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::invalid("every sigma2 must be > 0"));
    }
    let m = diagonal::moments(&params.theta, &params.sigma2, data)?;
    em_diagonal_from(&m, cache)
}

pub fn elu_step_diagonal(
    theta: &[f64],
    t: usize,
    config: &SolverConfig,
    data: &Dataset,
    cache: &DiagonalMomentCache,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let grad = diagonal::grad_f_bar_n(theta, data, cache)?;
    let next = gradient_step(theta, &grad, config.step_multiplier(t))?;
    let sigma2 = diagonal::profile_sigma2_diag(&next, cache)?;
    Ok((next, sigma2))
}

// --- general --------------------------------------------------------------

pub(crate) fn em_general_from(m: &GeneralMoments, d: usize) -> Result<GeneralParams> {
    if !(m.w1 > 0.0) {
        return Err(Error::DegenerateComponent { component: 1 });
    }
    if !(m.w2 > 0.0) {
        return Err(Error::DegenerateComponent { component: 2 });
    }
    let theta1: Vec<f64> = m.wx1.iter().map(|v| v / m.w1).collect();
    let theta2: Vec<f64> = m.wx2.iter().map(|v| v / m.w2).collect();
    check_finite(&theta1, "EM location update")?;
    check_finite(&theta2, "EM location update")?;
    let sigma2 = (m.sq - norm2(&theta1) * m.w1 - norm2(&theta2) * m.w2) / d as f64;
    if !sigma2.is_finite() {
        return Err(Error::NonFinite("EM scale update"));
    }
    if !(sigma2 > 0.0) {
        return Err(Error::Infeasible(format!("EM scale update gave sigma2 = {sigma2}")));
    }
    Ok(GeneralParams { theta1, theta2, sigma2 })
}

/// Responsibility-weighted means for `θ₁, θ₂` and the weighted scale, with
/// responsibilities at the current parameters.
pub fn em_step_general(params: &GeneralParams, data: &Dataset) -> Result<GeneralParams> {
    if !(params.sigma2 > 0.0) {
        return Err(Error::invalid("sigma2 must be > 0"));
    }
    let m = general::moments(&params.theta1, &params.theta2, params.sigma2, data)?;
    em_general_from(&m, data.d())
}

pub fn elu_step_general(
    theta1: &[f64],
    theta2: &[f64],
    t: usize,
    config: &SolverConfig,
    data: &Dataset,
    cache: &GeneralMomentCache,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let (g1, g2) = general::grad_f_tilde_n(theta1, theta2, data, cache)?;
    let mult = config.step_multiplier(t);
    let n1 = gradient_step(theta1, &g1, mult)?;
    let n2 = gradient_step(theta2, &g2, mult)?;
    let sigma2 = general::profile_sigma2_general(&n1, &n2, cache)?;
    Ok((n1, n2, sigma2))
}
