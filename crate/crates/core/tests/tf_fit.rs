mod common;

use common::{normal_equations_dd, Dd};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use photosid::tf::{
    build_regression, enforce_stability, fit_continuous, lstsq, poly_roots, solve_ls, solve_wls,
    tf_to_zpk, zpk_to_tf, Basis, RationalTf, StabilityPolicy, WeightProfile, ZpkModel,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Cdd = (Dd, Dd);

fn cmul(a: Cdd, b: Cdd) -> Cdd {
    (a.0 * b.0 - a.1 * b.1, a.0 * b.1 + a.1 * b.0)
}

fn cdd(z: Complex64) -> Cdd {
    (Dd::new(z.re), Dd::new(z.im))
}

fn cpow(z: Cdd, n: usize) -> Cdd {
    (0..n).fold((Dd::ONE, Dd::ZERO), |acc, _| cmul(acc, z))
}

fn log_freqs(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
}

fn sample(tf: &RationalTf, freqs: &[f64]) -> Vec<Complex64> {
    freqs.iter().map(|&f| tf.eval_hz(f)).collect()
}

fn random_complex(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
    (0..n).map(|_| Complex64::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0))).collect()
}

#[test]
fn regression_entries_match_double_double() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (na, nb, bins) = (2, 2, 7);
    let u = random_complex(&mut rng, bins);
    let y = random_complex(&mut rng, bins);
    let q: Vec<Complex64> = (0..bins).map(|k| Complex64::new(0.0, 0.3 + k as f64)).collect();
    let reg = build_regression(&u, &y, &q, na, nb, Basis::Continuous).unwrap();
    for k in 0..bins {
        let mut cols = Vec::new();
        for i in 1..=na {
            let v = cmul(cdd(-y[k]), cpow(cdd(q[k]), na - i));
            cols.push(v);
        }
        for i in 0..=nb {
            cols.push(cmul(cdd(u[k]), cpow(cdd(q[k]), nb - i)));
        }
        for (j, v) in cols.iter().enumerate() {
            assert!((reg.design[(k, j)] - v.0.to_f64()).abs() < 1e-13);
            assert!((reg.design[(bins + k, j)] - v.1.to_f64()).abs() < 1e-13);
        }
        let t = cmul(cdd(y[k]), cpow(cdd(q[k]), na));
        assert!((reg.target[k] - t.0.to_f64()).abs() < 1e-13);
        assert!((reg.target[bins + k] - t.1.to_f64()).abs() < 1e-13);
    }
}

#[test]
fn second_order_system_recovered() {
    let truth = RationalTf::continuous(vec![0.5, 2.0, 1.0], vec![1.0, 0.8, 0.25]);
    let freqs = log_freqs(1e-2, 10.0, 60);
    let fit = fit_continuous(&freqs, &sample(&truth, &freqs), 2, 2, &WeightProfile::uniform(60)).unwrap();
    for (a, b) in fit.tf.b.iter().chain(&fit.tf.a).zip(truth.b.iter().chain(&truth.a)) {
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }
    assert!(fit.diagnostics.weighted_rms_error < 1e-10);
}

#[test]
fn slow_pole_pair_model_recovered() {
    let truth = RationalTf::continuous(vec![1.0, 3.0, 2.0], vec![1.0, 0.5, 0.04]);
    let freqs = log_freqs(1e-3, 10.0, 200);
    let w = WeightProfile::inverse_bin_density(&freqs);
    let fit = fit_continuous(&freqs, &sample(&truth, &freqs), 2, 2, &w).unwrap();
    for (a, b) in fit.tf.b.iter().chain(&fit.tf.a).zip(truth.b.iter().chain(&truth.a)) {
        assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0), "{a} vs {b}");
    }
}

/// Design and target of a noisy second-order regression in q = j omega.
fn noisy_regression(seed: u64) -> (DMatrix<f64>, DVector<f64>, Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = RationalTf::continuous(vec![0.2, 1.0, 3.0], vec![1.0, 1.5, 0.9]);
    let freqs = log_freqs(0.02, 2.0, 40);
    let g: Vec<Complex64> = sample(&truth, &freqs)
        .into_iter()
        .map(|v| v * Complex64::new(1.0 + rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05)))
        .collect();
    let q: Vec<Complex64> = freqs.iter().map(|f| Complex64::new(0.0, std::f64::consts::TAU * f)).collect();
    let u = vec![Complex64::new(1.0, 0.0); freqs.len()];
    let reg = build_regression(&u, &g, &q, 2, 2, Basis::Continuous).unwrap();
    let rows: Vec<Vec<f64>> = (0..reg.design.nrows()).map(|r| reg.design.row(r).iter().copied().collect()).collect();
    let y: Vec<f64> = reg.target.iter().copied().collect();
    (reg.design, reg.target, rows, y)
}

#[test]
fn least_squares_matches_double_double_normal_equations() {
    for seed in 0..5 {
        let (d, t, rows, y) = noisy_regression(seed);
        let theta = solve_ls(&d, &t).unwrap();
        let oracle = normal_equations_dd(&rows, &y);
        for (a, b) in theta.iter().zip(&oracle) {
            let b = b.to_f64();
            assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0), "seed {seed}: {a} vs {b}");
        }
    }
}

#[test]
fn uniform_weights_reproduce_least_squares() {
    let (d, t, _, _) = noisy_regression(11);
    let ls = solve_ls(&d, &t).unwrap();
    let wls = solve_wls(&d, &t, &WeightProfile::uniform(d.nrows() / 2)).unwrap();
    for (a, b) in ls.iter().zip(wls.iter()) {
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }
}

#[test]
fn least_squares_residual_is_minimal() {
    let (d, t, _, _) = noisy_regression(4);
    let sol = lstsq(&d, &t).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..100 {
        let delta = DVector::from_fn(sol.theta.len(), |i, _| sol.theta[i].abs().max(1e-3) * rng.gen_range(-1e-3..1e-3));
        let r = (&d * (&sol.theta + delta) - &t).norm();
        assert!(r >= sol.residual_norm);
    }
}

#[test]
fn second_order_fits_no_worse_than_first() {
    // Third-order truth.
    let truth = RationalTf::continuous(vec![2.0, 1.0], vec![1.0, 2.2, 1.4, 0.2]);
    let freqs = log_freqs(1e-2, 5.0, 80);
    let g = sample(&truth, &freqs);
    let w = WeightProfile::inverse_bin_density(&freqs);
    let e1 = fit_continuous(&freqs, &g, 1, 1, &w).unwrap().diagnostics.weighted_rms_error;
    let e2 = fit_continuous(&freqs, &g, 2, 2, &w).unwrap().diagnostics.weighted_rms_error;
    assert!(e2 <= e1, "order 2 rms {e2} > order 1 rms {e1}");
}

fn companion_eigenvalues(c: &[f64]) -> Vec<Complex64> {
    let n = c.len() - 1;
    let m = DMatrix::from_fn(n, n, |i, j| {
        if i == 0 {
            -c[j + 1] / c[0]
        } else if i == j + 1 {
            1.0
        } else {
            0.0
        }
    });
    m.complex_eigenvalues().iter().copied().collect()
}

fn assert_same_roots(mut a: Vec<Complex64>, mut b: Vec<Complex64>, tol: f64) {
    let key = |z: &Complex64| (z.re, z.im);
    a.sort_by(|x, y| key(x).partial_cmp(&key(y)).unwrap());
    b.sort_by(|x, y| key(x).partial_cmp(&key(y)).unwrap());
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).norm() <= tol * y.norm().max(1.0), "{x} vs {y}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn roots_match_companion_eigenvalues(a1 in 0.1..20.0f64, a2 in 0.01..50.0f64, a3 in 0.01..10.0f64) {
        let c = [1.0, a1, a2, a3];
        assert_same_roots(poly_roots(&c), companion_eigenvalues(&c), 1e-10);
    }

    #[test]
    fn zpk_round_trip(b0 in -5.0..5.0f64, b1 in -5.0..5.0f64, b2 in 0.1..5.0f64, a1 in 0.1..10.0f64, a2 in 0.01..10.0f64) {
        prop_assume!(b0.abs() > 1e-2);
        let tf = RationalTf::continuous(vec![b0, b1, b2], vec![1.0, a1, a2]);
        let back = zpk_to_tf(&tf_to_zpk(&tf).unwrap());
        for (x, y) in back.b.iter().chain(&back.a).zip(tf.b.iter().chain(&tf.a)) {
            prop_assert!((x - y).abs() <= 1e-10 * y.abs().max(1.0));
        }
    }

    #[test]
    fn reflection_preserves_magnitude(p1 in -3.0..3.0f64, p2 in 0.01..3.0f64, z in -4.0..4.0f64, f in 1e-3..10.0f64) {
        prop_assume!(p1.abs() > 1e-3);
        let model = ZpkModel {
            gain: 1.7,
            zeros: vec![Complex64::new(z, 0.0)],
            poles: vec![Complex64::new(p1, 0.0), Complex64::new(-p2, 0.0)],
            u_dc: None,
            notes: vec![],
        };
        let stable = enforce_stability(&model, StabilityPolicy::Reflect).unwrap();
        prop_assert!(stable.is_stable());
        let (a, b) = (model.eval_hz(f).norm(), stable.eval_hz(f).norm());
        prop_assert!((a - b).abs() <= 1e-10 * a);
    }
}
