//! EM monotonicity, ELU against independent gradient-descent loops, fit
//! determinism and the regime diagnostic.

use overspec::objective::diagonal::{self, DiagonalMomentCache};
use overspec::objective::general::{self, GeneralMomentCache};
use overspec::objective::isotropic::{self, MomentCache};
use overspec::sampling::{sample_gaussian, sample_symmetric_mixture};
use overspec::solvers::{
    default_init, diagnose, elu_step_diagonal, elu_step_general, em_step_diagonal, em_step_general,
    em_step_isotropic, fit, Algorithm, DiagnoseOptions, Model, ModelParams, Regime, SolverConfig,
    TerminationReason,
};
use overspec::{Dataset, DiagonalParams, GeneralParams, IsotropicParams, TruthSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

fn uniform(rng: &mut ChaCha8Rng, d: usize, s: f64) -> Vec<f64> {
    (0..d).map(|_| s * (2.0 * rng.gen::<f64>() - 1.0)).collect()
}

fn random_data(rng: &mut ChaCha8Rng, d: usize, n: usize) -> Dataset {
    let truth = TruthSpec::new(uniform(rng, d, 1.0), 0.5 + rng.gen::<f64>()).unwrap();
    sample_symmetric_mixture(n, d, &truth, rng.gen()).unwrap()
}

fn no_increase(before: f64, after: f64) -> bool {
    after <= before + 1e-10 * before.abs().max(1.0)
}

#[test]
fn em_never_increases_the_likelihood_objective() {
    (0..100u64).into_par_iter().for_each(|s| {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + s);
        for &d in &[1usize, 4] {
            let data = random_data(&mut rng, d, 500);
            let iso = MomentCache::new(&data).unwrap();
            let diag = DiagonalMomentCache::new(&data).unwrap();

            let mut p = IsotropicParams::new(uniform(&mut rng, d, 0.8), 0.3 + 1.5 * rng.gen::<f64>()).unwrap();
            let mut q = DiagonalParams::new(
                uniform(&mut rng, d, 0.8),
                (0..d).map(|_| 0.3 + 1.5 * rng.gen::<f64>()).collect(),
            )
            .unwrap();
            let mut g = GeneralParams::new(uniform(&mut rng, d, 1.0), uniform(&mut rng, d, 1.0), 0.3 + 1.5 * rng.gen::<f64>())
                .unwrap();
            for _ in 0..20 {
                let next = em_step_isotropic(&p, &data, &iso).unwrap();
                let (a, b) = (isotropic::neg_loglik(&p, &data).unwrap(), isotropic::neg_loglik(&next, &data).unwrap());
                assert!(no_increase(a, b), "isotropic seed {s} d={d}: {a} -> {b}");
                p = next;

                let next = em_step_diagonal(&q, &data, &diag).unwrap();
                let (a, b) = (diagonal::neg_loglik_diag(&q, &data).unwrap(), diagonal::neg_loglik_diag(&next, &data).unwrap());
                assert!(no_increase(a, b), "diagonal seed {s} d={d}: {a} -> {b}");
                q = next;

                let next = em_step_general(&g, &data).unwrap();
                let (a, b) =
                    (general::neg_loglik_general(&g, &data).unwrap(), general::neg_loglik_general(&next, &data).unwrap());
                assert!(no_increase(a, b), "general seed {s} d={d}: {a} -> {b}");
                g = next;
            }
        }
    });
}

#[test]
fn em_training_objective_is_monotone_along_fits() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for &d in &[1usize, 4] {
        let data = random_data(&mut rng, d, 2000);
        let cfg = SolverConfig { max_iters: 100, ..SolverConfig::symmetric() };
        for model in [Model::Isotropic, Model::Diagonal, Model::General] {
            let init = default_init(model, &data, 3).unwrap();
            let trace = fit(Algorithm::Em, model, &data, &init, &cfg, None).unwrap();
            assert_eq!(trace.terminated_reason, TerminationReason::Completed);
            // The training objective of an EM record is the NLL at its own
            // (θ, σ²), which EM never raises.
            for w in trace.records.windows(2) {
                let nll = |r: &overspec::solvers::IterRecord| match &r.params {
                    ModelParams::Isotropic(p) => isotropic::neg_loglik(p, &train_of(&data, &cfg)).unwrap(),
                    ModelParams::Diagonal(p) => diagonal::neg_loglik_diag(p, &train_of(&data, &cfg)).unwrap(),
                    ModelParams::General(p) => general::neg_loglik_general(p, &train_of(&data, &cfg)).unwrap(),
                };
                assert!(no_increase(nll(&w[0]), nll(&w[1])), "{model:?} d={d} iter {}", w[1].iter);
            }
        }
    }
}

fn train_of(data: &Dataset, cfg: &SolverConfig) -> Dataset {
    overspec::sampling::split_train_val(data, cfg.val_fraction, cfg.seed).unwrap().train
}

fn theta_of(p: &ModelParams) -> Vec<f64> {
    match p {
        ModelParams::Isotropic(p) => p.theta.clone(),
        ModelParams::Diagonal(p) => p.theta.clone(),
        ModelParams::General(p) => p.theta1.iter().chain(&p.theta2).copied().collect(),
    }
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * y.abs().max(1.0))
}

#[test]
fn elu_with_unit_beta_is_plain_gradient_descent() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for &d in &[1usize, 4] {
        let data = random_data(&mut rng, d, 1000);
        let eta = 0.05;
        let cfg = SolverConfig { eta, beta: 1.0, max_iters: 10, val_fraction: 0.0, ..SolverConfig::symmetric() };
        for model in [Model::Isotropic, Model::Diagonal, Model::General] {
            let init = default_init(model, &data, 11).unwrap();
            let trace = fit(Algorithm::Elu, model, &data, &init, &cfg, None).unwrap();
            assert_eq!(trace.records.len(), 11);
            let mut theta = theta_of(&init);
            for r in &trace.records {
                assert!(close(&theta_of(&r.params), &theta, 1e-12), "{model:?} d={d} iter {}", r.iter);
                let grad = match model {
                    Model::Isotropic => isotropic::grad_f_n(&theta, &data, &MomentCache::new(&data).unwrap()).unwrap(),
                    Model::Diagonal => {
                        diagonal::grad_f_bar_n(&theta, &data, &DiagonalMomentCache::new(&data).unwrap()).unwrap()
                    }
                    Model::General => {
                        let (g1, g2) = general::grad_f_tilde_n(
                            &theta[..d],
                            &theta[d..],
                            &data,
                            &GeneralMomentCache::new(&data).unwrap(),
                        )
                        .unwrap();
                        g1.into_iter().chain(g2).collect()
                    }
                };
                for (t, g) in theta.iter_mut().zip(&grad) {
                    *t -= eta * g;
                }
            }
        }
    }
}

/// Profiled diagonal objective gradient written out directly:
/// `s_j = m2_j − θ_j²`, `w_j = θ_j/s_j`,
/// `∂f̄/∂θ_j = −θ_j/s_j + 2θ_j m2_j/s_j² − (m2_j + θ_j²)/s_j² · mean_i X_ij tanh(Σ_l X_il w_l)`.
fn reference_diag_grad(theta: &[f64], data: &Dataset) -> Vec<f64> {
    let (n, d) = (data.n(), data.d());
    let m2: Vec<f64> = (0..d).map(|j| (0..n).map(|i| data.row(i)[j].powi(2)).sum::<f64>() / n as f64).collect();
    let s: Vec<f64> = (0..d).map(|j| m2[j] - theta[j] * theta[j]).collect();
    let w: Vec<f64> = (0..d).map(|j| theta[j] / s[j]).collect();
    let mut xt = vec![0.0; d];
    for i in 0..n {
        let x = data.row(i);
        let z: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
        let th = z.tanh();
        for j in 0..d {
            xt[j] += x[j] * th;
        }
    }
    (0..d)
        .map(|j| {
            let (t, sj) = (theta[j], s[j]);
            -t / sj + 2.0 * t * m2[j] / (sj * sj) - (m2[j] + t * t) / (sj * sj) * xt[j] / n as f64
        })
        .collect()
}

#[test]
fn diagonal_elu_trajectory_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let data = random_data(&mut rng, 4, 2000);
    let cache = DiagonalMomentCache::new(&data).unwrap();
    let cfg = SolverConfig::large_step();
    let mut theta = vec![0.3, -0.2, 0.15, 0.4];
    let mut reference = theta.clone();
    for t in 0..5 {
        let (next, sigma2) = elu_step_diagonal(&theta, t, &cfg, &data, &cache).unwrap();
        let g = reference_diag_grad(&reference, &data);
        let mult = cfg.eta / cfg.beta.powi(t as i32);
        for (r, gj) in reference.iter_mut().zip(&g) {
            *r -= mult * gj;
        }
        assert!(close(&next, &reference, 1e-12), "step {t}: {next:?} vs {reference:?}");
        for j in 0..4 {
            let m2 = (0..data.n()).map(|i| data.row(i)[j].powi(2)).sum::<f64>() / data.n() as f64;
            assert!((sigma2[j] - (m2 - next[j] * next[j])).abs() <= 1e-12);
        }
        theta = next;
    }
}

#[test]
fn general_steps_are_label_swap_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let data = random_data(&mut rng, 3, 800);
    let cache = GeneralMomentCache::new(&data).unwrap();
    let cfg = SolverConfig::large_step();
    for _ in 0..20 {
        let (a, b) = (uniform(&mut rng, 3, 1.0), uniform(&mut rng, 3, 1.0));
        let (a1, b1, s1) = elu_step_general(&a, &b, 2, &cfg, &data, &cache).unwrap();
        let (b2, a2, s2) = elu_step_general(&b, &a, 2, &cfg, &data, &cache).unwrap();
        assert!(close(&a1, &a2, 1e-12) && close(&b1, &b2, 1e-12) && (s1 - s2).abs() <= 1e-12);

        let p = GeneralParams::new(a.clone(), b.clone(), 0.5 + rng.gen::<f64>()).unwrap();
        let e = em_step_general(&p, &data).unwrap();
        let f = em_step_general(&p.swapped(), &data).unwrap().swapped();
        assert!(close(&e.theta1, &f.theta1, 1e-12) && close(&e.theta2, &f.theta2, 1e-12));
        assert!((e.sigma2 - f.sigma2).abs() <= 1e-12);
    }
}

#[test]
fn general_symmetric_point_of_centred_data_is_stationary() {
    let x = sample_gaussian(1000, 2, &TruthSpec::standard(2), 4).unwrap();
    let mean: Vec<f64> = (0..2).map(|j| (0..x.n()).map(|i| x.row(i)[j]).sum::<f64>() / x.n() as f64).collect();
    let flat: Vec<f64> = x.samples().chunks(2).flat_map(|r| [r[0] - mean[0], r[1] - mean[1]]).collect();
    let data = Dataset::new(flat, x.n(), 2, 0, TruthSpec::standard(2)).unwrap();
    let cache = GeneralMomentCache::new(&data).unwrap();
    let (g1, g2) = general::grad_f_tilde_n(&[0.0, 0.0], &[0.0, 0.0], &data, &cache).unwrap();
    assert!(g1.iter().chain(&g2).all(|v| v.abs() < 1e-14), "{g1:?} {g2:?}");
    let (a, b, _) = elu_step_general(&[0.0, 0.0], &[0.0, 0.0], 0, &SolverConfig::large_step(), &data, &cache).unwrap();
    assert!(a.iter().chain(&b).all(|v| v.abs() < 1e-14));
}

#[test]
fn fits_are_bit_identical_across_runs_and_thread_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let data = random_data(&mut rng, 4, 30_000);
    let cfg = SolverConfig { max_iters: 40, ..SolverConfig::symmetric() };
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    for algo in [Algorithm::Em, Algorithm::Elu] {
        for model in [Model::Isotropic, Model::Diagonal, Model::General] {
            let init = default_init(model, &data, 1).unwrap();
            let run = || fit(algo, model, &data, &init, &cfg, Some(&data.truth)).unwrap();
            let a = one.install(run);
            let b = four.install(run);
            assert_eq!(a, b, "{algo:?} {model:?}");
            assert_eq!(a.to_csv(), run().to_csv());
        }
    }
}

#[test]
fn elu_best_validation_never_worse_than_start() {
    let data = sample_gaussian(10_000, 1, &TruthSpec::standard(1), 21).unwrap();
    let cache = MomentCache::new(&data).unwrap();
    let init = ModelParams::Isotropic(IsotropicParams::new(vec![0.5], isotropic::moment_sigma2(&[0.5], &cache).unwrap()).unwrap());
    let trace = fit(Algorithm::Elu, Model::Isotropic, &data, &init, &SolverConfig::symmetric(), Some(&data.truth)).unwrap();
    let v0 = trace.records[0].val_objective.unwrap();
    assert!(trace.best().val_objective.unwrap() <= v0);
    assert!(trace.records.iter().all(|r| r.val_objective.unwrap() >= trace.best().val_objective.unwrap()));
    let first = trace.records.iter().position(|r| r.val_objective == trace.best().val_objective).unwrap();
    assert_eq!(first, trace.best_index);
}

#[test]
fn diagnose_separates_the_two_regimes() {
    let d = 2;
    let results: Vec<(Regime, Regime)> = (0..10u64)
        .into_par_iter()
        .map(|seed| {
            let sep = TruthSpec::new(vec![5.0 / 2f64.sqrt(), 5.0 / 2f64.sqrt()], 1.0).unwrap();
            let mixed = sample_symmetric_mixture(100_000, d, &sep, 100 + seed).unwrap();
            let plain = sample_gaussian(100_000, d, &TruthSpec::standard(d), 200 + seed).unwrap();
            let cfg = SolverConfig { seed, ..SolverConfig::symmetric() };
            let opts = DiagnoseOptions::default();
            (
                diagnose(&mixed, &cfg, None, &opts).unwrap().regime,
                diagnose(&plain, &cfg, None, &opts).unwrap().regime,
            )
        })
        .collect();
    for (seed, (a, b)) in results.iter().enumerate() {
        assert_eq!(*a, Regime::ExactlySpecifiedLike, "seed {seed}");
        assert_eq!(*b, Regime::OverSpecifiedLike, "seed {seed}");
    }
}

#[test]
fn diagnose_needs_em_iterations() {
    let data = sample_gaussian(100, 1, &TruthSpec::standard(1), 0).unwrap();
    let opts = DiagnoseOptions { em_iters: 0, ..DiagnoseOptions::default() };
    let err = diagnose(&data, &SolverConfig::symmetric(), None, &opts).unwrap_err();
    assert!(err.is_validation());
}
