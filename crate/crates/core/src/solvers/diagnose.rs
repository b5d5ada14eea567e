//! Run EM and ELU on the same data and read the regime off EM's speed:
//! geometric convergence of the EM iterates points to an exactly-specified
//! mixture, slow convergence to an over-specified one.

use serde::{Deserialize, Serialize};

use super::fit::{fit, init_on_sphere};
use super::{Algorithm, Model, ModelParams, SolverConfig};
use crate::error::{Error, Result};
use crate::objective::isotropic::MomentCache;
use crate::sampling::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    ExactlySpecifiedLike,
    OverSpecifiedLike,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseOptions {
    /// EM iterations `K`.
    pub em_iters: usize,
    /// Decay factors below this are read as geometric convergence.
    pub decay_cut: f64,
}

impl Default for DiagnoseOptions {
    fn default() -> Self {
        Self { em_iters: 50, decay_cut: 0.9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnoseReport {
    pub regime: Regime,
    /// Fitted per-iteration decay factor of EM's step lengths; `0` when EM
    /// reached machine precision inside the window.
    pub em_rate: f64,
    /// ELU's best-index location error against `data.truth`.
    pub elu_best_err: f64,
    pub em_final_err: f64,
    pub elu_iters_to_best: usize,
}

/// Isotropic start used by the diagnostic: uniform direction, radius
/// `½√(d a_n)`, i.e. half the feasible radius.
pub fn diagnose_init(data: &Dataset, seed: u64) -> Result<ModelParams> {
    let a_n = MomentCache::new(data)?.a_n;
    init_on_sphere(Model::Isotropic, data, seed, 0.5 * (data.d() as f64 * a_n).sqrt())
}

/// `init = None` uses [`diagnose_init`].
pub fn diagnose(
    data: &Dataset,
    config: &SolverConfig,
    init: Option<&ModelParams>,
    opts: &DiagnoseOptions,
) -> Result<DiagnoseReport> {
    if opts.em_iters < 2 {
        return Err(Error::invalid(format!("diagnose needs at least 2 EM iterations, got {}", opts.em_iters)));
    }
    if !(opts.decay_cut > 0.0 && opts.decay_cut < 1.0) {
        return Err(Error::invalid("decay_cut must lie in (0, 1)"));
    }
    let owned;
    let init = match init {
        Some(p) => p,
        None => {
            owned = diagnose_init(data, config.seed)?;
            &owned
        }
    };
    let truth = Some(&data.truth);
    let truth_cfg = SolverConfig { record_truth_errors: true, ..config.clone() };
    let em_cfg = SolverConfig { max_iters: opts.em_iters, ..truth_cfg.clone() };
    let em = fit(Algorithm::Em, Model::Isotropic, data, init, &em_cfg, truth)?;
    let elu = fit(Algorithm::Elu, Model::Isotropic, data, init, &truth_cfg, truth)?;
    let thetas: Vec<&[f64]> = em
        .records
        .iter()
        .map(|r| match &r.params {
            ModelParams::Isotropic(p) => p.theta.as_slice(),
            _ => unreachable!("diagnose fits the isotropic model"),
        })
        .collect();
    let em_rate = step_decay_rate(&thetas);
    let regime = if em_rate < opts.decay_cut {
        Regime::ExactlySpecifiedLike
    } else {
        Regime::OverSpecifiedLike
    };
    Ok(DiagnoseReport {
        regime,
        em_rate,
        elu_best_err: elu.best().err_location.unwrap_or(f64::NAN),
        em_final_err: em.last().err_location.unwrap_or(f64::NAN),
        elu_iters_to_best: elu.best_index,
    })
}

/// `exp(slope)` of `log ‖θ_{t+1} − θ_t‖` against `t` over the second half
/// of the run, ignoring steps already at rounding level.
pub(crate) fn step_decay_rate(thetas: &[&[f64]]) -> f64 {
    let k = thetas.len().saturating_sub(1);
    let mut pts = Vec::new();
    for t in k / 2..k {
        let step: f64 = thetas[t + 1].iter().zip(thetas[t]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let scale: f64 = thetas[t + 1].iter().map(|v| v * v).sum::<f64>().sqrt();
        if step > 1e-12 * (1.0 + scale) {
            pts.push((t as f64, step.ln()));
        }
    }
    if pts.len() < 2 {
        return 0.0;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    (sxy / sxx).exp()
}
