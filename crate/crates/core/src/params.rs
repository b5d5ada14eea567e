//! Parameter types for the three fitted models and the error metrics used
//! to score them against the generating truth.
//!
//! Scales are always stored as variances; `σ` is derived on demand.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} has non-finite entries")))
    }
}

fn check_variance(v: f64, what: &str) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} must be finite and > 0, got {v}")))
    }
}

/// Symmetric isotropic model `½N(-θ, σ²I) + ½N(θ, σ²I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotropicParams {
    pub theta: Vec<f64>,
    pub sigma2: f64,
}

impl IsotropicParams {
    pub fn new(theta: Vec<f64>, sigma2: f64) -> Result<Self> {
        check_finite(&theta, "theta")?;
        check_variance(sigma2, "sigma2")?;
        Ok(Self { theta, sigma2 })
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }
}

/// Symmetric model with a diagonal covariance `diag(σ_1², …, σ_d²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalParams {
    pub theta: Vec<f64>,
    pub sigma2: Vec<f64>,
}

impl DiagonalParams {
    pub fn new(theta: Vec<f64>, sigma2: Vec<f64>) -> Result<Self> {
        check_dim(theta.len(), sigma2.len())?;
        check_finite(&theta, "theta")?;
        for (j, &v) in sigma2.iter().enumerate() {
            check_variance(v, &format!("sigma2[{j}]"))?;
        }
        Ok(Self { theta, sigma2 })
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }
}

/// Two free locations sharing one isotropic variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralParams {
    pub theta1: Vec<f64>,
    pub theta2: Vec<f64>,
    pub sigma2: f64,
}

impl GeneralParams {
    pub fn new(theta1: Vec<f64>, theta2: Vec<f64>, sigma2: f64) -> Result<Self> {
        check_dim(theta1.len(), theta2.len())?;
        check_finite(&theta1, "theta1")?;
        check_finite(&theta2, "theta2")?;
        check_variance(sigma2, "sigma2")?;
        Ok(Self { theta1, theta2, sigma2 })
    }

    pub fn dim(&self) -> usize {
        self.theta1.len()
    }

    /// Label-swapped copy.
    pub fn swapped(&self) -> Self {
        Self { theta1: self.theta2.clone(), theta2: self.theta1.clone(), sigma2: self.sigma2 }
    }

    /// Lexicographic ordering of the two locations; used for reporting only.
    pub fn canonical(&self) -> Self {
        let ord = self
            .theta1
            .iter()
            .zip(&self.theta2)
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal);
        if ord.is_gt() {
            self.swapped()
        } else {
            self.clone()
        }
    }
}

/// The generating distribution `N(θ*, σ*² I)` (or the symmetric mixture
/// around `±θ*` for the high-SNR sampler).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSpec {
    pub theta_star: Vec<f64>,
    pub sigma_star2: f64,
}

impl TruthSpec {
    pub fn new(theta_star: Vec<f64>, sigma_star2: f64) -> Result<Self> {
        check_finite(&theta_star, "theta_star")?;
        check_variance(sigma_star2, "sigma_star2")?;
        Ok(Self { theta_star, sigma_star2 })
    }

    /// Over-specified truth: `θ* = 0`, `σ*² = 1`.
    pub fn standard(d: usize) -> Self {
        Self { theta_star: vec![0.0; d], sigma_star2: 1.0 }
    }

    pub fn dim(&self) -> usize {
        self.theta_star.len()
    }
}

/// `min(‖θ − θ*‖, ‖θ + θ*‖)`: the symmetric models cannot tell `θ` from `−θ`.
pub fn location_error_symmetric(theta: &[f64], truth: &TruthSpec) -> Result<f64> {
    check_dim(truth.dim(), theta.len())?;
    let (mut minus, mut plus) = (0.0, 0.0);
    for (t, s) in theta.iter().zip(&truth.theta_star) {
        minus += (t - s) * (t - s);
        plus += (t + s) * (t + s);
    }
    Ok(minus.min(plus).sqrt())
}

pub fn scale_error(sigma2: f64, truth: &TruthSpec) -> f64 {
    (sigma2 - truth.sigma_star2).abs()
}

/// Largest per-coordinate variance error of a diagonal fit.
pub fn scale_error_diagonal(sigma2: &[f64], truth: &TruthSpec) -> f64 {
    sigma2.iter().map(|&v| scale_error(v, truth)).fold(0.0, f64::max)
}

/// W₁ between `½δ_(θ₁,σ) + ½δ_(θ₂,σ)` and `δ_(θ*,σ*)`, Euclidean ground
/// metric on `(θ, σ)`. With a single target atom every coupling is the
/// product coupling, so this is the average atom distance.
pub fn wasserstein_general(params: &GeneralParams, truth: &TruthSpec) -> Result<f64> {
    check_dim(truth.dim(), params.dim())?;
    let ds = params.sigma2.sqrt() - truth.sigma_star2.sqrt();
    let d1 = dist2(&params.theta1, &truth.theta_star) + ds * ds;
    let d2 = dist2(&params.theta2, &truth.theta_star) + ds * ds;
    Ok(0.5 * (d1.sqrt() + d2.sqrt()))
}

/// Location part of [`wasserstein_general`]: `½(‖θ₁ − θ*‖ + ‖θ₂ − θ*‖)`.
pub fn wasserstein_location_part(params: &GeneralParams, truth: &TruthSpec) -> Result<f64> {
    check_dim(truth.dim(), params.dim())?;
    Ok(0.5
        * (dist2(&params.theta1, &truth.theta_star).sqrt()
            + dist2(&params.theta2, &truth.theta_star).sqrt()))
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
