mod common;

use std::f64::consts::TAU;

use common::Dd;
use num_complex::Complex64;
use photosid::bdm::{simulate, BdmParameters, LightProgram, SimulationOptions};
use photosid::excitation::{design_multisine, render, AmplitudeProfile, GridRule, MultisineSpec};
use photosid::spectral::{
    analyze_realization, bla, dft, extract_periods, period_statistics, PeriodSpectra,
    RealizationFrf,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn naive_dft(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (Dd::ZERO, Dd::ZERO);
            for (i, &v) in x.iter().enumerate() {
                let (s, c) = (Dd::new(-TAU) * ((k * i) % n) as f64 / n as f64).sin_cos();
                re = re + c * v;
                im = im + s * v;
            }
            Complex64::new((re / n as f64).to_f64(), (im / n as f64).to_f64())
        })
        .collect()
}

fn noise(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

#[test]
fn fft_matches_double_double_dft() {
    for seed in 0..4 {
        let x = noise(seed, 64);
        for (a, b) in dft(&x).unwrap().iter().zip(naive_dft(&x)) {
            assert!((a - b).norm() < 1e-12);
        }
    }
}

#[test]
fn variance_matches_two_pass_reference() {
    let periods = 5;
    let n = 32;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let u: Vec<Vec<f64>> = (0..periods).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let y: Vec<Vec<f64>> = (0..periods).map(|_| (0..n).map(|_| 1e3 + rng.gen_range(-1.0..1.0)).collect()).collect();
    let ur: Vec<&[f64]> = u.iter().map(Vec::as_slice).collect();
    let yr: Vec<&[f64]> = y.iter().map(Vec::as_slice).collect();
    let spectra = PeriodSpectra::from_periods(&ur, &yr, 1.0, &[1, 2, 3]).unwrap();
    let (_, sy) = period_statistics(&spectra).unwrap();
    for k in 0..spectra.bins() {
        let vals: Vec<(Dd, Dd)> = spectra.y.iter().map(|p| (Dd::new(p[k].re), Dd::new(p[k].im))).collect();
        let p = periods as f64;
        let mre = vals.iter().fold(Dd::ZERO, |a, v| a + v.0) / p;
        let mim = vals.iter().fold(Dd::ZERO, |a, v| a + v.1) / p;
        let var = vals
            .iter()
            .fold(Dd::ZERO, |a, v| a + (v.0 - mre) * (v.0 - mre) + (v.1 - mim) * (v.1 - mim))
            / (p - 1.0);
        let r = var.to_f64();
        assert!((sy.variance[k] - r).abs() <= 1e-10 * r.max(1e-300), "bin {k}");
    }
}

fn lti_realization(seed: u64, periods: usize) -> (MultisineSpec, RealizationFrf) {
    let spec = design_multisine(20.0, &AmplitudeProfile::Flat(1.0), 0.05, 2.0, 12, GridRule::Logarithmic, seed).unwrap();
    let fs = 10.0;
    let sig = render(&spec, fs, periods).unwrap();
    let y: Vec<f64> = sig
        .times()
        .map(|t| {
            let mut y = spec.u_dc;
            for ((&k, &a), &ph) in spec.harmonics.iter().zip(&spec.amplitudes).zip(&spec.phases) {
                let w = TAU * k as f64 * spec.base_frequency;
                let g = 1.0 / Complex64::new(1.0, w);
                y += a * g.norm() * (w * t + ph + g.arg()).sin();
            }
            y
        })
        .collect();
    let n = sig.samples_per_period;
    let ur: Vec<&[f64]> = sig.samples.chunks(n).collect();
    let yr: Vec<&[f64]> = y.chunks(n).collect();
    let spectra = PeriodSpectra::from_periods(&ur, &yr, spec.base_frequency, &spec.harmonics).unwrap();
    (spec, analyze_realization(&spectra).unwrap())
}

#[test]
fn bla_of_first_order_system() {
    let reals: Vec<RealizationFrf> = (0..4).map(|s| lti_realization(s, 3).1).collect();
    let est = bla(&reals).unwrap();
    for p in est.excited_points() {
        let g = 1.0 / Complex64::new(1.0, TAU * p.freq);
        assert!((p.g - g).norm() < 1e-8, "f={}", p.freq);
        assert!(p.sigma2_noise <= 1e-14);
        assert!(p.sigma2_total <= 1e-14);
    }
}

#[test]
fn noiseless_periods_have_zero_output_variance() {
    let spec = MultisineSpec::single_tone(3.0, 1.0, 0.5, 0.2);
    let sig = render(&spec, 8.0, 4).unwrap();
    let y: Vec<f64> = sig.samples.iter().map(|v| 2.0 * v - 1.0).collect();
    let n = sig.samples_per_period;
    let ur: Vec<&[f64]> = sig.samples.chunks(n).collect();
    let yr: Vec<&[f64]> = y.chunks(n).collect();
    let spectra = PeriodSpectra::from_periods(&ur, &yr, 0.5, &spec.harmonics).unwrap();
    let (_, sy) = period_statistics(&spectra).unwrap();
    assert!(sy.variance.iter().all(|&v| v == 0.0));
    let frf = analyze_realization(&spectra).unwrap();
    assert!(frf.sigma2_noise.iter().all(|&v| v == 0.0));
}

#[test]
fn bdm_shows_nonlinear_variance() {
    let p = BdmParameters::table_defaults(0.25);
    let fs = 10.0;
    let mut reals = Vec::new();
    for seed in 0..3 {
        let spec = design_multisine(300.0, &AmplitudeProfile::FlatPeak(100.0), 0.02, 1.0, 20, GridRule::Logarithmic, seed).unwrap();
        let periods = 3;
        let program = LightProgram::Multisine(spec.clone());
        let tr = simulate(&p, &program, None, (0.0, periods as f64 / spec.base_frequency - 0.5 / fs), fs, &SimulationOptions::default()).unwrap();
        let n = (fs / spec.base_frequency).round() as usize;
        let spectra = extract_periods(&tr.u, &tr.chlf(), n, &spec, 2, f64::INFINITY).unwrap();
        reals.push(analyze_realization(&spectra).unwrap());
    }
    let est = bla(&reals).unwrap();
    let positive = est.excited_points().iter().filter(|p| p.sigma2_total > 0.0).count();
    assert!(positive > 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn dft_is_linear(seed in any::<u64>(), a in -3.0..3.0f64, b in -3.0..3.0f64) {
        let x = noise(seed, 48);
        let y = noise(seed ^ 0x5555, 48);
        let z: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let (fx, fy, fz) = (dft(&x).unwrap(), dft(&y).unwrap(), dft(&z).unwrap());
        for k in 0..fz.len() {
            prop_assert!((fz[k] - (fx[k] * a + fy[k] * b)).norm() < 1e-13);
        }
    }

    #[test]
    fn bla_ignores_realization_order(seed in any::<u64>()) {
        let mut reals: Vec<RealizationFrf> = (0..4u64).map(|s| {
            let (_, mut r) = lti_realization(s, 2);
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(s));
            for g in r.g.iter_mut().filter(|g| g.norm() > 0.0) {
                *g += Complex64::new(rng.gen_range(-0.01..0.01), rng.gen_range(-0.01..0.01));
            }
            r
        }).collect();
        let a = bla(&reals).unwrap();
        reals.reverse();
        reals.swap(0, 2);
        let b = bla(&reals).unwrap();
        for k in 0..a.g.len() {
            prop_assert!((a.g[k] - b.g[k]).norm() <= 1e-15 * a.g[k].norm().max(1.0));
            prop_assert!((a.sigma2_total[k] - b.sigma2_total[k]).abs() <= 1e-12 * a.sigma2_total[k].max(1e-300));
        }
    }
}
