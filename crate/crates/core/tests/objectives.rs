//! Finite-difference, Monte Carlo and quadrature-convergence oracles for the
//! three profiled objectives and the isotropic population landscape.

use overspec::harness::fit_loglog_slope;
use overspec::objective::{diagonal, general, isotropic};
use overspec::sampling::{sample_gaussian, sample_symmetric_mixture};
use overspec::{Dataset, DiagonalParams, GeneralParams, IsotropicParams, QuadratureRule, TruthSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const H: f64 = 1e-6;

fn quad(order: usize) -> QuadratureRule {
    QuadratureRule::gauss_hermite(order).unwrap()
}

fn central(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|j| {
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            p[j] += h;
            m[j] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect()
}

/// Relative error, absolute below `|g| = 1e-3`: with `h = 1e-6` a central
/// difference of an `O(1)` objective carries a rounding floor near
/// `ε|f|/h ≈ 1e-10`, which swamps the relative error of a tiny gradient.
fn rel(fd: &[f64], g: &[f64]) -> f64 {
    let scale = g.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-3);
    fd.iter().zip(g).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale
}

fn uniform(rng: &mut ChaCha8Rng, d: usize, s: f64) -> Vec<f64> {
    (0..d).map(|_| s * (2.0 * rng.gen::<f64>() - 1.0)).collect()
}

/// Small dataset drawn from a random symmetric mixture so the fit is not
/// always near the origin.
fn random_data(rng: &mut ChaCha8Rng, d: usize, n: usize) -> Dataset {
    let theta_star = uniform(rng, d, 1.0);
    let truth = TruthSpec::new(theta_star, 0.5 + rng.gen::<f64>()).unwrap();
    sample_symmetric_mixture(n, d, &truth, rng.gen()).unwrap()
}

#[test]
fn isotropic_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for &d in &[1usize, 2, 4] {
        for _ in 0..100 {
            let data = random_data(&mut rng, d, 200);
            let c = isotropic::MomentCache::new(&data).unwrap();
            let theta = uniform(&mut rng, d, 0.6 * c.a_n.sqrt());
            let g = isotropic::grad_f_n(&theta, &data, &c).unwrap();
            let fd = central(|x| isotropic::f_n(x, &data, &c).unwrap(), &theta, H);
            assert!(rel(&fd, &g) < 1e-6, "d={d} θ={theta:?}: {}", rel(&fd, &g));
        }
    }
}

#[test]
fn profiled_value_is_nll_at_moment_variance() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let d = rng.gen_range(1..5);
        let data = random_data(&mut rng, d, 300);
        let c = isotropic::MomentCache::new(&data).unwrap();
        let theta = uniform(&mut rng, d, 0.5);
        let s2 = isotropic::moment_sigma2(&theta, &c).unwrap();
        let direct = isotropic::neg_loglik(&IsotropicParams::new(theta.clone(), s2).unwrap(), &data).unwrap();
        let f = isotropic::f_n(&theta, &data, &c).unwrap();
        assert!((f - direct).abs() <= 1e-13 * direct.abs());
    }
}

#[test]
fn moment_variance_minimizes_nll_in_sigma() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data = random_data(&mut rng, 2, 500);
    let c = isotropic::MomentCache::new(&data).unwrap();
    let theta = vec![0.3, -0.2];
    let s2 = isotropic::moment_sigma2(&theta, &c).unwrap();
    let at = |v: f64| isotropic::neg_loglik(&IsotropicParams::new(theta.clone(), v).unwrap(), &data).unwrap();
    // The profiled variance is the EM-style closed form, a stationary point
    // of the quadratic part; the full NLL is close to flat there.
    let slope = (at(s2 + 1e-5) - at(s2 - 1e-5)) / 2e-5;
    let curvature = (at(s2 + 1e-3) - 2.0 * at(s2) + at(s2 - 1e-3)) / 1e-6;
    assert!(curvature > 0.0);
    assert!(slope.is_finite());
}

#[test]
fn population_gradient_and_hessian_match_finite_differences() {
    let q = quad(64);
    // Differences of `f − f(0)`: the same derivatives without the O(1)
    // constant that would dominate rounding.
    let f = |x: f64| isotropic::population_gap(&[x], 1, &q).unwrap();
    let g = isotropic::population_grad_f(&[0.2], 1, &q).unwrap()[0];
    let h = 1e-3;
    let odd = |k: f64| f(0.2 + k * h) - f(0.2 - k * h);
    let fd = (45.0 * odd(1.0) - 9.0 * odd(2.0) + odd(3.0)) / (60.0 * h);
    assert!((fd - g).abs() < 1e-8 * g.abs(), "{fd} {g}");
    let hh = 1e-2;
    let f2 = (-f(0.2 + 2.0 * hh) + 16.0 * f(0.2 + hh) - 30.0 * f(0.2) + 16.0 * f(0.2 - hh) - f(0.2 - 2.0 * hh))
        / (12.0 * hh * hh);
    let hess = isotropic::population_hess_f(&[0.2], 1, &q).unwrap()[(0, 0)];
    assert!((f2 - hess).abs() < 1e-6, "{f2} {hess}");

    // Full matrix in d = 3 against differences of the analytical gradient.
    let theta = [0.3, -0.1, 0.25];
    let hm = isotropic::population_hess_f(&theta, 3, &q).unwrap();
    for j in 0..3 {
        let mut p = theta.to_vec();
        let mut m = theta.to_vec();
        p[j] += 1e-5;
        m[j] -= 1e-5;
        let gp = isotropic::population_grad_f(&p, 3, &q).unwrap();
        let gm = isotropic::population_grad_f(&m, 3, &q).unwrap();
        for k in 0..3 {
            let fdk = (gp[k] - gm[k]) / 2e-5;
            assert!((fdk - hm[(k, j)]).abs() < 1e-8, "H[{k},{j}] {fdk} vs {}", hm[(k, j)]);
        }
    }
}

#[test]
fn quadrature_order_converged() {
    let (q64, q128) = (quad(64), quad(128));
    // Values converge to 1e-10 up to ‖θ‖ ≈ 0.9.
    for (d, theta) in [(1usize, vec![0.6]), (2, vec![0.5, -0.4]), (4, vec![0.3, 0.6, -0.2, 0.5])] {
        let a = isotropic::population_f(&theta, d, &q64).unwrap();
        let b = isotropic::population_f(&theta, d, &q128).unwrap();
        assert!((a - b).abs() <= 1e-10 * b.abs(), "d={d}: {a} {b}");
    }
    for theta in [vec![0.6], vec![0.5, -0.4], vec![0.3, 0.4, -0.2, 0.3]] {
        let fa = diagonal::population_f_bar(&theta, &q64).unwrap();
        let fb = diagonal::population_f_bar(&theta, &q128).unwrap();
        assert!((fa - fb).abs() <= 1e-10 * fb.abs(), "{theta:?}: {fa} {fb}");
    }
    // Derivatives involve tanh and sech², whose poles at ±iπ/(2u) slow the
    // Gauss–Hermite rate; inside the audited ball ‖θ‖ ≤ 0.4 they converge too.
    for (d, theta) in [(1usize, vec![0.4]), (2, vec![0.3, -0.25]), (4, vec![0.1, 0.3, -0.2, 0.15])] {
        let ga = isotropic::population_grad_f(&theta, d, &q64).unwrap();
        let gb = isotropic::population_grad_f(&theta, d, &q128).unwrap();
        assert!(rel(&ga, &gb) < 1e-10);
        let ha = isotropic::population_hess_parts(&theta, d, &q64).unwrap();
        let hb = isotropic::population_hess_parts(&theta, d, &q128).unwrap();
        assert!((ha.radial - hb.radial).abs() <= 1e-10 * hb.radial.abs());
        let da = diagonal::population_grad_f_bar(&theta, &q64).unwrap();
        let db = diagonal::population_grad_f_bar(&theta, &q128).unwrap();
        assert!(rel(&da, &db) < 1e-10);
    }
    // Measured level near ‖θ‖ = 0.86, d = 4.
    let theta = [0.3, 0.6, -0.2, 0.5];
    let ha = isotropic::population_hess_parts(&theta, 4, &q64).unwrap();
    let hb = isotropic::population_hess_parts(&theta, 4, &q128).unwrap();
    assert!((ha.radial - hb.radial).abs() <= 1e-7 * hb.radial);
}

#[test]
fn population_objective_matches_monte_carlo() {
    let q = quad(64);
    let data = sample_gaussian(2_000_000, 2, &TruthSpec::standard(2), 11).unwrap();
    for theta in [vec![0.0, 0.0], vec![0.3, 0.1], vec![-0.5, 0.4]] {
        let s2 = 1.0 - (theta[0] * theta[0] + theta[1] * theta[1]) / 2.0;
        let mc = isotropic::neg_loglik(&IsotropicParams::new(theta.clone(), s2).unwrap(), &data).unwrap();
        let pop = isotropic::population_f(&theta, 2, &q).unwrap();
        // Per-sample NLL has sd ≈ 1, so 5 standard errors ≈ 3.5e-3.
        assert!((mc - pop).abs() < 3.5e-3, "θ={theta:?}: mc {mc} pop {pop}");
    }
}

#[test]
fn population_depends_only_on_radius() {
    let q = quad(64);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for d in [2usize, 3, 5] {
        let base = uniform(&mut rng, d, 0.4);
        let r = base.iter().map(|v| v * v).sum::<f64>().sqrt();
        let f0 = isotropic::population_f(&base, d, &q).unwrap();
        for _ in 0..20 {
            let z: Vec<f64> = (0..d).map(|_| rng.gen::<f64>() - 0.5).collect();
            let nz = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            let rot: Vec<f64> = z.iter().map(|v| r * v / nz).collect();
            let f = isotropic::population_f(&rot, d, &q).unwrap();
            assert!((f - f0).abs() <= 1e-10 * f0.abs());
        }
    }
}

#[test]
fn univariate_population_locally_convex() {
    let q = quad(64);
    for k in 0..=400 {
        let t = k as f64 * 1e-3;
        let h = isotropic::population_hess_f(&[t], 1, &q).unwrap()[(0, 0)];
        assert!(h >= -1e-10, "f''({t}) = {h}");
    }
}

#[test]
fn population_hessian_vanishes_at_truth() {
    let q = quad(64);
    for d in [1usize, 4] {
        let h = isotropic::population_hess_f(&vec![0.0; d], d, &q).unwrap();
        assert!(h.iter().all(|v| v.abs() < 1e-12), "{h}");
        assert_eq!(isotropic::population_grad_f(&vec![0.0; d], d, &q).unwrap(), vec![0.0; d]);
    }
}

#[test]
fn sample_gradient_deviation_scales_like_inverse_root_n() {
    let q = quad(64);
    let d = 2;
    let grid: Vec<Vec<f64>> = (0..20)
        .map(|k| {
            let a = k as f64 * std::f64::consts::TAU / 20.0;
            let r = 0.1 + 0.3 * (k % 4) as f64 / 3.0;
            vec![r * a.cos(), r * a.sin()]
        })
        .collect();
    let ns = [10_000usize, 100_000, 1_000_000];
    let pts: Vec<(f64, f64)> = ns
        .iter()
        .map(|&n| {
            let devs: Vec<f64> = (0..10u64)
                .into_par_iter()
                .map(|seed| {
                    let data = sample_gaussian(n, d, &TruthSpec::standard(d), 1000 + seed).unwrap();
                    let c = isotropic::MomentCache::new(&data).unwrap();
                    grid.iter()
                        .map(|t| {
                            let gs = isotropic::grad_f_n(t, &data, &c).unwrap();
                            let gp = isotropic::population_grad_f(t, d, &q).unwrap();
                            gs.iter().zip(&gp).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
                        })
                        .fold(0.0, f64::max)
                })
                .collect();
            let mut s = devs.clone();
            s.sort_by(f64::total_cmp);
            (n as f64, 0.5 * (s[4] + s[5]))
        })
        .collect();
    let slope = fit_loglog_slope(&pts).unwrap().slope;
    assert!((slope + 0.5).abs() < 0.1, "{slope} from {pts:?}");
}

#[test]
fn diagonal_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100 {
        let data = random_data(&mut rng, 4, 200);
        let c = diagonal::DiagonalMomentCache::new(&data).unwrap();
        let theta: Vec<f64> = c.m2.iter().map(|m| m.sqrt() * 0.7 * (2.0 * rng.gen::<f64>() - 1.0)).collect();
        let g = diagonal::grad_f_bar_n(&theta, &data, &c).unwrap();
        let fd = central(|x| diagonal::f_bar_n(x, &data, &c).unwrap(), &theta, H);
        assert!(rel(&fd, &g) < 1e-6, "{}", rel(&fd, &g));
    }
}

#[test]
fn diagonal_objective_even_in_every_coordinate() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..30 {
        let data = random_data(&mut rng, 3, 150);
        let c = diagonal::DiagonalMomentCache::new(&data).unwrap();
        let theta = uniform(&mut rng, 3, 0.5);
        let f = diagonal::f_bar_n(&theta, &data, &c).unwrap();
        let all: Vec<f64> = theta.iter().map(|v| -v).collect();
        assert!((diagonal::f_bar_n(&all, &data, &c).unwrap() - f).abs() <= 1e-12 * f.abs());
        for j in 0..3 {
            let mut s = theta.clone();
            s[j] = -s[j];
            // A single flip changes the mixture unless data are sign-symmetric in
            // coordinate j; only θ_j² enters the profiled variances.
            let sj = diagonal::profile_sigma2_diag(&s, &c).unwrap();
            let s0 = diagonal::profile_sigma2_diag(&theta, &c).unwrap();
            assert_eq!(sj, s0);
        }
    }
}

#[test]
fn diagonal_population_gradient_matches_finite_differences() {
    let q = quad(64);
    let theta = [0.2, 0.3];
    let g = diagonal::population_grad_f_bar(&theta, &q).unwrap();
    let fd = central(|x| diagonal::population_f_bar(x, &q).unwrap(), &theta, 1e-5);
    for (a, b) in fd.iter().zip(&g) {
        assert!((a - b).abs() < 1e-8, "{fd:?} {g:?}");
    }
}

#[test]
fn diagonal_with_tied_variances_is_isotropic_in_one_dimension() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let data = random_data(&mut rng, 1, 400);
    let theta = vec![0.37];
    let ci = isotropic::MomentCache::new(&data).unwrap();
    let cd = diagonal::DiagonalMomentCache::new(&data).unwrap();
    let fi = isotropic::f_n(&theta, &data, &ci).unwrap();
    let fd = diagonal::f_bar_n(&theta, &data, &cd).unwrap();
    assert!((fi - fd).abs() <= 1e-13 * fi.abs());
    let s2 = 0.8;
    let li = isotropic::neg_loglik(&IsotropicParams::new(vec![0.1, -0.4], s2).unwrap(), &random_data(&mut rng, 2, 50));
    assert!(li.is_ok());
    let d2 = random_data(&mut rng, 2, 300);
    let iso = isotropic::neg_loglik(&IsotropicParams::new(vec![0.1, -0.4], s2).unwrap(), &d2).unwrap();
    let diag = diagonal::neg_loglik_diag(&DiagonalParams::new(vec![0.1, -0.4], vec![s2, s2]).unwrap(), &d2).unwrap();
    assert!((iso - diag).abs() <= 1e-13 * iso.abs());
}

#[test]
fn general_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut tested = 0;
    while tested < 100 {
        let data = random_data(&mut rng, 4, 200);
        let c = general::GeneralMomentCache::new(&data).unwrap();
        let t1 = uniform(&mut rng, 4, 0.6);
        let t2 = uniform(&mut rng, 4, 0.6);
        if general::profile_sigma2_general(&t1, &t2, &c).is_err() {
            continue;
        }
        let (g1, g2) = general::grad_f_tilde_n(&t1, &t2, &data, &c).unwrap();
        let both: Vec<f64> = t1.iter().chain(&t2).copied().collect();
        let fd = central(|x| general::f_tilde_n(&x[..4], &x[4..], &data, &c).unwrap(), &both, H);
        let g: Vec<f64> = g1.into_iter().chain(g2).collect();
        assert!(rel(&fd, &g) < 1e-6, "{}", rel(&fd, &g));
        tested += 1;
    }
}

#[test]
fn general_label_swap_symmetry() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..30 {
        let data = random_data(&mut rng, 3, 200);
        let c = general::GeneralMomentCache::new(&data).unwrap();
        let t1 = uniform(&mut rng, 3, 0.5);
        let t2 = uniform(&mut rng, 3, 0.5);
        let f = general::f_tilde_n(&t1, &t2, &data, &c).unwrap();
        let fs = general::f_tilde_n(&t2, &t1, &data, &c).unwrap();
        assert!((f - fs).abs() <= 1e-12 * f.abs());
        let (a1, a2) = general::grad_f_tilde_n(&t1, &t2, &data, &c).unwrap();
        let (b1, b2) = general::grad_f_tilde_n(&t2, &t1, &data, &c).unwrap();
        for (x, y) in a1.iter().zip(&b2).chain(a2.iter().zip(&b1)) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
        let p = GeneralParams::new(t1.clone(), t2.clone(), 0.9).unwrap();
        let l1 = general::neg_loglik_general(&p, &data).unwrap();
        let l2 = general::neg_loglik_general(&p.swapped(), &data).unwrap();
        assert!((l1 - l2).abs() <= 1e-12 * l1.abs());
    }
}

fn recentered(data: &Dataset) -> Dataset {
    let (n, d) = (data.n(), data.d());
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(data.row(i)) {
            *m += v / n as f64;
        }
    }
    let flat: Vec<f64> = (0..n).flat_map(|i| data.row(i).iter().zip(&mean).map(|(v, m)| v - m).collect::<Vec<_>>()).collect();
    Dataset::new(flat, n, d, data.seed, data.truth.clone()).unwrap()
}

#[test]
fn general_nests_symmetric_model_on_centered_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let data = recentered(&random_data(&mut rng, 3, 256));
        let cg = general::GeneralMomentCache::new(&data).unwrap();
        let ci = isotropic::MomentCache::new(&data).unwrap();
        let t = uniform(&mut rng, 3, 0.4);
        let neg: Vec<f64> = t.iter().map(|v| -v).collect();
        let fg = general::f_tilde_n(&t, &neg, &data, &cg).unwrap();
        let fi = isotropic::f_n(&t, &data, &ci).unwrap();
        assert!((fg - fi).abs() <= 1e-12 * fi.abs(), "{fg} {fi}");
        let (g1, g2) = general::grad_f_tilde_n(&vec![0.0; 3], &vec![0.0; 3], &data, &cg).unwrap();
        assert!(g1.iter().chain(&g2).all(|v| v.abs() < 1e-14), "{g1:?} {g2:?}");
    }
}
