//! The fitting loop: iterate, record objectives and truth errors, stop on
//! `max_iters` or on the first infeasible or non-finite step, and select
//! the iterate with the smallest validation negative log-likelihood.

use std::fmt::Write as _;

use serde::Serialize;

use super::steps::{em_diagonal_from, em_general_from, em_isotropic_from, gradient_step};
use super::{Algorithm, Model, ModelParams, SolverConfig};
use crate::error::{check_dim, Error, Result};
use crate::objective::diagonal::{self, DiagonalMomentCache};
use crate::objective::general::{self, GeneralMomentCache};
use crate::objective::isotropic::{self, MomentCache};
use crate::params::{
    location_error_symmetric, scale_error, scale_error_diagonal, wasserstein_general,
    wasserstein_location_part, DiagonalParams, GeneralParams, IsotropicParams, TruthSpec,
};
use crate::sampling::{split_train_val, standard_normals, Dataset, SplitDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    Completed,
    InfeasibleIterate,
    Nonfinite,
}

impl TerminationReason {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminationReason::Completed => "completed",
            TerminationReason::InfeasibleIterate => "infeasible_iterate",
            TerminationReason::Nonfinite => "nonfinite",
        }
    }
}

impl std::fmt::Display for TerminationReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterRecord {
    pub iter: usize,
    pub params: ModelParams,
    pub train_objective: f64,
    pub val_objective: Option<f64>,
    /// Symmetric location error, or the location part of W₁ for the general model.
    pub err_location: Option<f64>,
    /// `|σ² − σ*²|`; the largest coordinate error for the diagonal model.
    pub err_scale: Option<f64>,
    /// Full W₁ of the general model.
    pub wasserstein: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitTrace {
    pub algorithm: Algorithm,
    pub model: Model,
    pub records: Vec<IterRecord>,
    pub best_index: usize,
    pub terminated_reason: TerminationReason,
}

impl FitTrace {
    pub fn best(&self) -> &IterRecord {
        &self.records[self.best_index]
    }

    pub fn last(&self) -> &IterRecord {
        self.records.last().expect("a trace always holds the initial record")
    }

    /// `iter,train_obj,val_obj,err_location,err_scale,is_best`; absent values are empty.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iter,train_obj,val_obj,err_location,err_scale,is_best\n");
        for (k, r) in self.records.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.iter,
                r.train_objective,
                opt(r.val_objective),
                opt(r.err_location),
                opt(r.err_scale),
                u8::from(k == self.best_index)
            );
        }
        s
    }
}

pub(crate) fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `θ⁰` uniform on the sphere of radius `0.5`, with the profiled variance
/// on `data`. The general model starts at `(θ⁰, −θ⁰)`.
pub fn default_init(model: Model, data: &Dataset, seed: u64) -> Result<ModelParams> {
    init_on_sphere(model, data, seed, 0.5)
}

pub(crate) fn init_on_sphere(model: Model, data: &Dataset, seed: u64, radius: f64) -> Result<ModelParams> {
    let d = data.d();
    let z = standard_normals(seed ^ 0x1a17_0000_0000_0001, d);
    let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    let theta: Vec<f64> = if norm > 0.0 {
        z.iter().map(|v| radius * v / norm).collect()
    } else {
        let mut e = vec![0.0; d];
        e[0] = radius;
        e
    };
    match model {
        Model::Isotropic => {
            let sigma2 = isotropic::moment_sigma2(&theta, &MomentCache::new(data)?)?;
            Ok(ModelParams::Isotropic(IsotropicParams { theta, sigma2 }))
        }
        Model::Diagonal => {
            let sigma2 = diagonal::profile_sigma2_diag(&theta, &DiagonalMomentCache::new(data)?)?;
            Ok(ModelParams::Diagonal(DiagonalParams { theta, sigma2 }))
        }
        Model::General => {
            let neg: Vec<f64> = theta.iter().map(|v| -v).collect();
            let sigma2 = general::profile_sigma2_general(&theta, &neg, &GeneralMomentCache::new(data)?)?;
            Ok(ModelParams::General(GeneralParams { theta1: theta, theta2: neg, sigma2 }))
        }
    }
}

/// Split `data` by `config.val_fraction` and fit on the training part.
pub fn fit(
    algorithm: Algorithm,
    model: Model,
    data: &Dataset,
    init: &ModelParams,
    config: &SolverConfig,
    truth: Option<&TruthSpec>,
) -> Result<FitTrace> {
    config.validate()?;
    let split = split_train_val(data, config.val_fraction, config.seed)?;
    fit_split(algorithm, model, &split, init, config, truth)
}

/// Fit on an existing split; `config.val_fraction` is ignored.
pub fn fit_split(
    algorithm: Algorithm,
    model: Model,
    split: &SplitDataset,
    init: &ModelParams,
    config: &SolverConfig,
    truth: Option<&TruthSpec>,
) -> Result<FitTrace> {
    config.validate()?;
    if init.model() != model {
        return Err(Error::invalid(format!("init is for {:?}, fitting {model:?}", init.model())));
    }
    let train = &split.train;
    check_dim(train.d(), init.dim())?;
    if let Some(t) = truth {
        check_dim(train.d(), t.dim())?;
    }
    let truth = truth.filter(|_| config.record_truth_errors);
    let stepper = Stepper::new(algorithm, model, train, config)?;
    let mut current = stepper.start(init)?;
    let mut records = Vec::with_capacity(config.max_iters.min(4096) + 1);
    let mut reason = TerminationReason::Completed;
    for t in 0..=config.max_iters {
        let (train_objective, next) = match stepper.advance(&current, t) {
            Ok(v) => v,
            Err(e) if t == 0 => return Err(e),
            Err(e) => {
                reason = classify(&e);
                break;
            }
        };
        if !train_objective.is_finite() {
            if t == 0 {
                return Err(Error::NonFinite("objective at the initial iterate"));
            }
            reason = TerminationReason::Nonfinite;
            break;
        }
        let val_objective = match &split.validation {
            Some(v) => Some(validation_nll(&current, v)?),
            None => None,
        };
        let (err_location, err_scale, wasserstein) = match truth {
            Some(tr) => truth_errors(&current, tr)?,
            None => (None, None, None),
        };
        records.push(IterRecord {
            iter: t,
            params: current.clone(),
            train_objective,
            val_objective,
            err_location,
            err_scale,
            wasserstein,
        });
        if t == config.max_iters {
            break;
        }
        match next {
            Ok(p) => current = p,
            Err(e) => {
                reason = classify(&e);
                break;
            }
        }
    }
    let best_index = select_best(&records);
    Ok(FitTrace { algorithm, model, records, best_index, terminated_reason: reason })
}

fn classify(e: &Error) -> TerminationReason {
    match e {
        Error::NonFinite(_) => TerminationReason::Nonfinite,
        _ => TerminationReason::InfeasibleIterate,
    }
}

fn select_best(records: &[IterRecord]) -> usize {
    let key = |r: &IterRecord| r.val_objective.unwrap_or(r.train_objective);
    let mut best = 0;
    for (k, r) in records.iter().enumerate().skip(1) {
        let v = key(r);
        if v < key(&records[best]) {
            best = k;
        }
    }
    best
}

pub(crate) fn validation_nll(p: &ModelParams, val: &Dataset) -> Result<f64> {
    match p {
        ModelParams::Isotropic(p) => isotropic::neg_loglik(p, val),
        ModelParams::Diagonal(p) => diagonal::neg_loglik_diag(p, val),
        ModelParams::General(p) => general::neg_loglik_general(p, val),
    }
}

type TruthErrors = (Option<f64>, Option<f64>, Option<f64>);

fn truth_errors(p: &ModelParams, truth: &TruthSpec) -> Result<TruthErrors> {
    Ok(match p {
        ModelParams::Isotropic(p) => {
            (Some(location_error_symmetric(&p.theta, truth)?), Some(scale_error(p.sigma2, truth)), None)
        }
        ModelParams::Diagonal(p) => (
            Some(location_error_symmetric(&p.theta, truth)?),
            Some(scale_error_diagonal(&p.sigma2, truth)),
            None,
        ),
        ModelParams::General(p) => (
            Some(wasserstein_location_part(p, truth)?),
            Some(scale_error(p.sigma2, truth)),
            Some(wasserstein_general(p, truth)?),
        ),
    })
}

enum Cache {
    Isotropic(MomentCache),
    Diagonal(DiagonalMomentCache),
    General(GeneralMomentCache),
}

struct Stepper<'a> {
    algorithm: Algorithm,
    data: &'a Dataset,
    cache: Cache,
    config: &'a SolverConfig,
}

impl<'a> Stepper<'a> {
    fn new(algorithm: Algorithm, model: Model, data: &'a Dataset, config: &'a SolverConfig) -> Result<Self> {
        let cache = match model {
            Model::Isotropic => Cache::Isotropic(MomentCache::new(data)?),
            Model::Diagonal => Cache::Diagonal(DiagonalMomentCache::new(data)?),
            Model::General => Cache::General(GeneralMomentCache::new(data)?),
        };
        Ok(Self { algorithm, data, cache, config })
    }

    /// EM keeps the supplied variance; ELU replaces it by the profiled one.
    fn start(&self, init: &ModelParams) -> Result<ModelParams> {
        match (init, &self.cache) {
            (ModelParams::Isotropic(p), Cache::Isotropic(c)) => {
                let profiled = isotropic::moment_sigma2(&p.theta, c)?;
                let sigma2 = if self.algorithm == Algorithm::Elu { profiled } else { p.sigma2 };
                Ok(ModelParams::Isotropic(IsotropicParams::new(p.theta.clone(), sigma2)?))
            }
            (ModelParams::Diagonal(p), Cache::Diagonal(c)) => {
                let profiled = diagonal::profile_sigma2_diag(&p.theta, c)?;
                let sigma2 = if self.algorithm == Algorithm::Elu { profiled } else { p.sigma2.clone() };
                Ok(ModelParams::Diagonal(DiagonalParams::new(p.theta.clone(), sigma2)?))
            }
            (ModelParams::General(p), Cache::General(c)) => {
                let profiled = general::profile_sigma2_general(&p.theta1, &p.theta2, c)?;
                let sigma2 = if self.algorithm == Algorithm::Elu { profiled } else { p.sigma2 };
                Ok(ModelParams::General(GeneralParams::new(p.theta1.clone(), p.theta2.clone(), sigma2)?))
            }
            _ => Err(Error::invalid("init does not match the model")),
        }
    }

    /// Training objective at `p` and the next iterate, from one data pass.
    fn advance(&self, p: &ModelParams, t: usize) -> Result<(f64, Result<ModelParams>)> {
        let mult = self.config.step_multiplier(t);
        let em = self.algorithm == Algorithm::Em;
        Ok(match (p, &self.cache) {
            (ModelParams::Isotropic(p), Cache::Isotropic(c)) => {
                let m = isotropic::moments(&p.theta, p.sigma2, self.data)?;
                if em {
                    let obj = isotropic::nll_from(&m, &p.theta, p.sigma2, c.d);
                    (obj, em_isotropic_from(&m, c).map(ModelParams::Isotropic))
                } else {
                    let ev = isotropic::profiled_from(&m, &p.theta, p.sigma2, c);
                    let next = gradient_step(&p.theta, &ev.grad, mult).and_then(|theta| {
                        let sigma2 = isotropic::moment_sigma2(&theta, c)?;
                        Ok(ModelParams::Isotropic(IsotropicParams { theta, sigma2 }))
                    });
                    (ev.value, next)
                }
            }
            (ModelParams::Diagonal(p), Cache::Diagonal(c)) => {
                let m = diagonal::moments(&p.theta, &p.sigma2, self.data)?;
                if em {
                    let obj = diagonal::nll_from(&m, &p.theta, &p.sigma2);
                    (obj, em_diagonal_from(&m, c).map(ModelParams::Diagonal))
                } else {
                    let ev = diagonal::profiled_from(&m, &p.theta, p.sigma2.clone(), c);
                    let next = gradient_step(&p.theta, &ev.grad, mult).and_then(|theta| {
                        let sigma2 = diagonal::profile_sigma2_diag(&theta, c)?;
                        Ok(ModelParams::Diagonal(DiagonalParams { theta, sigma2 }))
                    });
                    (ev.value, next)
                }
            }
            (ModelParams::General(p), Cache::General(c)) => {
                let m = general::moments(&p.theta1, &p.theta2, p.sigma2, self.data)?;
                if em {
                    let obj = general::nll_from(&m, p.sigma2, self.data.d());
                    (obj, em_general_from(&m, self.data.d()).map(ModelParams::General))
                } else {
                    let ev = general::profiled_from(&m, &p.theta1, &p.theta2, p.sigma2, c);
                    let next = gradient_step(&p.theta1, &ev.grad1, mult).and_then(|theta1| {
                        let theta2 = gradient_step(&p.theta2, &ev.grad2, mult)?;
                        let sigma2 = general::profile_sigma2_general(&theta1, &theta2, c)?;
                        Ok(ModelParams::General(GeneralParams { theta1, theta2, sigma2 }))
                    });
                    (ev.value, next)
                }
            }
            _ => return Err(Error::invalid("iterate does not match the model")),
        })
    }
}
