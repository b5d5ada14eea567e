//! EM and ELU for the three models, the validation-stopped fitting loop,
//! and the EM-vs-ELU regime diagnostic.
//!
//! EM alternates an exact location step (responsibilities at the current
//! variance) with the exact variance minimization at the new location. ELU
//! is gradient descent on the σ-profiled objective with step `η β^{−t}`,
//! followed by the same closed-form variance.

mod diagnose;
mod fit;
mod steps;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{DiagonalParams, GeneralParams, IsotropicParams};

pub use diagnose::{diagnose, diagnose_init, DiagnoseOptions, DiagnoseReport, Regime};
pub use fit::{default_init, fit, fit_split, FitTrace, IterRecord, TerminationReason};
pub use steps::{
    elu_step_diagonal, elu_step_general, elu_step_isotropic, em_step_diagonal, em_step_general,
    em_step_isotropic,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Em,
    Elu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Isotropic,
    Diagonal,
    General,
}

impl std::str::FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "em" => Ok(Algorithm::Em),
            "elu" => Ok(Algorithm::Elu),
            _ => Err(Error::invalid(format!("unknown algorithm {s:?}"))),
        }
    }
}

impl std::str::FromStr for Model {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "isotropic" => Ok(Model::Isotropic),
            "diagonal" => Ok(Model::Diagonal),
            "general" => Ok(Model::General),
            _ => Err(Error::invalid(format!("unknown model {s:?}"))),
        }
    }
}

/// One iterate of any of the three models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "model")]
pub enum ModelParams {
    Isotropic(IsotropicParams),
    Diagonal(DiagonalParams),
    General(GeneralParams),
}

impl ModelParams {
    pub fn model(&self) -> Model {
        match self {
            ModelParams::Isotropic(_) => Model::Isotropic,
            ModelParams::Diagonal(_) => Model::Diagonal,
            ModelParams::General(_) => Model::General,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ModelParams::Isotropic(p) => p.dim(),
            ModelParams::Diagonal(p) => p.dim(),
            ModelParams::General(p) => p.dim(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub eta: f64,
    pub beta: f64,
    pub max_iters: usize,
    pub val_fraction: f64,
    pub seed: u64,
    pub record_truth_errors: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::symmetric()
    }
}

impl SolverConfig {
    /// `η = 0.01, β = 0.8`, the setting used for the symmetric models.
    pub fn symmetric() -> Self {
        Self { eta: 0.01, beta: 0.8, max_iters: 500, val_fraction: 0.1, seed: 0, record_truth_errors: true }
    }

    /// `η = 1, β = 0.9`, the setting used for the diagonal and general models.
    pub fn large_step() -> Self {
        Self { eta: 1.0, beta: 0.9, ..Self::symmetric() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::invalid(format!("eta must be > 0, got {}", self.eta)));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::invalid(format!("beta must lie in (0, 1], got {}", self.beta)));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::invalid(format!("val_fraction must lie in [0, 1), got {}", self.val_fraction)));
        }
        Ok(())
    }

    /// Step multiplier `η β^{−t}`.
    pub fn step_multiplier(&self, t: usize) -> f64 {
        self.eta * self.beta.powi(-(t as i32))
    }

    /// The two step-size conditions under which the ELU rate guarantee holds,
    /// for a homogeneity constant `c1`, exponent `alpha` and initial
    /// distance `r0`. Returns the violated conditions (and logs a warning
    /// for each); an empty list means both hold.
    pub fn step_size_advisory(&self, c1: f64, alpha: f64, r0: f64) -> Vec<String> {
        let mut out = Vec::new();
        let scale = self.eta * c1 * r0.powf(alpha);
        let lhs1 = scale * self.beta / ((alpha + 1.0) * (alpha + 2.0)) + self.beta.powf(2.0 / alpha);
        if lhs1 < 1.0 {
            out.push(format!(
                "η C₁ r₀^α β/((α+1)(α+2)) + β^(2/α) = {lhs1:.6} < 1 (η={}, β={}, C₁={c1}, α={alpha}, r₀={r0})",
                self.eta, self.beta
            ));
        }
        let lhs2 = scale * (alpha + 2.0) * 3f64.powf(alpha);
        if lhs2 > alpha + 1.0 {
            out.push(format!(
                "η C₁ (α+2) 3^α r₀^α = {lhs2:.6} > α+1 = {} (η={}, C₁={c1}, α={alpha}, r₀={r0})",
                alpha + 1.0,
                self.eta
            ));
        }
        for msg in &out {
            log::warn!("step-size condition violated: {msg}");
        }
        out
    }
}
