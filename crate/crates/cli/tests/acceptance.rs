//! Acceptance run. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::f64::consts::{SQRT_2, TAU};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use photosid::excitation::{crest_factor_of, design_multisine, render, AmplitudeProfile, GridRule, MultisineSpec};
use photosid::lpv::{eval_schedule, lpv_state_space, LpvSchedule, RangePolicy};
use photosid::spectral::{analyze_realization, bla, dft, period_statistics, PeriodSpectra, RealizationFrf};
use photosid::tf::{fit_continuous, solve_ls, solve_wls, tf_to_zpk, zpk_to_tf, build_regression, Basis, RationalTf, WeightProfile};
use photosid_cli::config::ExperimentConfig;
use photosid_cli::pipeline::{identify, lpv_build, simulate_cases, validate_traces, IdentifyReport, ValidationReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

fn median(v: &[f64]) -> f64 {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn criterion_1(cfg: &ExperimentConfig, report: &IdentifyReport) -> Verdict {
    let m = &cfg.multisine;
    if (m.amplitude, m.realizations, m.periods) != (38.0, 6, 4) {
        return Verdict::new(false, format!("desk design is A={} M={} P={}", m.amplitude, m.realizations, m.periods));
    }
    let Some(p) = report.point(100.0) else {
        return Verdict::new(false, "no model at u_dc=100");
    };
    let frf = &p.frf;
    let mut sep = Vec::new();
    for k in 0..frf.g.len() {
        let f = frf.freq(k);
        if frf.excited[k] && (1e-3..=10.0).contains(&f) {
            let var = frf.realizations as f64 * frf.sigma2_total[k];
            sep.push(20.0 * frf.g[k].norm().log10() - 10.0 * var.log10());
        }
    }
    if sep.is_empty() {
        return Verdict::new(false, "no excited bins in 1e-3..10 Hz");
    }
    let med = median(&sep);
    Verdict::new(med >= 35.0, format!("median separation {med:.2} dB over {} bins (>= 35)", sep.len()))
}

fn criterion_2(report: &IdentifyReport) -> Verdict {
    let mut bad = Vec::new();
    let mut worst: f64 = 0.0;
    for o in &report.points {
        match &o.result {
            Err(e) => bad.push(format!("u={}: {e}", o.u_dc)),
            Ok(p) => {
                if p.wls.tf.na() != 2 || p.wls.tf.nb() != 2 || p.model.poles.len() != 2 {
                    bad.push(format!("u={}: order nb={} na={}", o.u_dc, p.wls.tf.nb(), p.wls.tf.na()));
                }
                if !p.model.poles.iter().all(|z| z.re < 0.0) {
                    bad.push(format!("u={}: poles {:?}", o.u_dc, p.model.poles));
                }
                if !(p.magnitude_error_db <= 3.0) {
                    bad.push(format!("u={}: magnitude error {:.3} dB", o.u_dc, p.magnitude_error_db));
                }
                worst = worst.max(p.magnitude_error_db);
            }
        }
    }
    let n = report.points.len();
    let pass = n == 19 && bad.is_empty();
    let mut detail = format!("{n} grid points, worst WLS magnitude error {worst:.3} dB (<= 3)");
    if !bad.is_empty() {
        detail.push_str(&format!("; {}", bad.join("; ")));
    }
    Verdict::new(pass, detail)
}

fn criterion_3(schedule: &LpvSchedule) -> Verdict {
    let r2 = &schedule.r2;
    let v = |x: Option<f64>| x.unwrap_or(f64::NAN);
    let gain_ok = v(r2.k) >= 0.90;
    let pz = [("P1", r2.p1), ("P2", r2.p2), ("Z1", r2.z1), ("Z2", r2.z2)];
    let pz_ok = pz.iter().all(|(_, x)| v(*x) >= 0.95);
    let list: Vec<String> = pz.iter().map(|(n, x)| format!("{n} {:.4}", v(*x))).collect();
    Verdict::new(
        gain_ok && pz_ok,
        format!("K {:.4} (>= 0.90); {} (>= 0.95); y_ss {:.4}", v(r2.k), list.join(", "), v(r2.y_ss)),
    )
}

const SINE_CASES: [(&str, f64); 8] = [
    ("u420_f1e-3", 0.80),
    ("u420_f1e-2", 0.90),
    ("u420_f1e-1", 0.90),
    ("u420_f1", 0.90),
    ("u860_f1e-3", 0.80),
    ("u860_f1e-2", 0.90),
    ("u860_f1e-1", 0.90),
    ("u860_f1", 0.90),
];

fn criterion_4(built: &ValidationReport, published: &ValidationReport, elapsed: Duration) -> Verdict {
    let mut pass = elapsed <= Duration::from_secs(600);
    let mut parts = Vec::new();
    for report in [built, published] {
        let mut cells = Vec::new();
        for (name, floor) in SINE_CASES {
            let r2 = report.r2(name).unwrap_or(f64::NAN);
            pass &= r2 >= floor;
            cells.push(format!("{name} {r2:.3}"));
        }
        parts.push(format!("{}: {}", report.label, cells.join(", ")));
    }
    Verdict::new(pass, format!("{}; {:.0} s (<= 600)", parts.join(" | "), elapsed.as_secs_f64()))
}

fn criterion_5(built: &ValidationReport, window_seconds: f64) -> Verdict {
    let r2 = built.r2("u530_multisine").unwrap_or(f64::NAN);
    let pass = r2 >= 0.93 && (window_seconds - 1000.0).abs() < 1e-9;
    Verdict::new(pass, format!("R2 {r2:.4} (>= 0.93) over a {window_seconds} s window"))
}

fn naive_dft(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    (0..=n / 2)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(i, &v)| v * Complex64::from_polar(1.0, -TAU * ((k * i) % n) as f64 / n as f64))
                .sum::<Complex64>()
                / n as f64
        })
        .collect()
}

fn lti_realization(seed: u64) -> RealizationFrf {
    let spec = design_multisine(20.0, &AmplitudeProfile::Flat(1.0), 0.05, 2.0, 12, GridRule::Logarithmic, seed).unwrap();
    let sig = render(&spec, 10.0, 3).unwrap();
    let y: Vec<f64> = sig.times().map(|t| first_order(&spec, t)).collect();
    let n = sig.samples_per_period;
    let ur: Vec<&[f64]> = sig.samples.chunks(n).collect();
    let yr: Vec<&[f64]> = y.chunks(n).collect();
    analyze_realization(&PeriodSpectra::from_periods(&ur, &yr, spec.base_frequency, &spec.harmonics).unwrap()).unwrap()
}

/// Periodic response of 1 / (1 + s) to a multisine.
fn first_order(spec: &MultisineSpec, t: f64) -> f64 {
    let mut y = spec.u_dc;
    for ((&k, &a), &ph) in spec.harmonics.iter().zip(&spec.amplitudes).zip(&spec.phases) {
        let w = TAU * k as f64 * spec.base_frequency;
        let g = 1.0 / Complex64::new(1.0, w);
        y += a * g.norm() * (w * t + ph + g.arg()).sin();
    }
    y
}

fn criterion_6() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut checks: Vec<(&str, bool, String)> = Vec::new();

    let mut e = 0.0f64;
    for n in [16, 63, 64, 100] {
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for (a, b) in dft(&x).unwrap().iter().zip(naive_dft(&x)) {
            e = e.max((a - b).norm());
        }
    }
    checks.push(("dft", e <= 1e-12, format!("{e:.1e}")));

    let truth = RationalTf::continuous(vec![0.5, 2.0, 1.0], vec![1.0, 0.8, 0.25]);
    let freqs: Vec<f64> = (0..60).map(|i| 1e-2 * 1e3f64.powf(i as f64 / 59.0)).collect();
    let g: Vec<Complex64> = freqs.iter().map(|&f| truth.eval_hz(f)).collect();
    let fit = fit_continuous(&freqs, &g, 2, 2, &WeightProfile::uniform(freqs.len())).unwrap();
    let e = fit.tf.b.iter().chain(&fit.tf.a).zip(truth.b.iter().chain(&truth.a))
        .map(|(a, b)| (a - b).abs() / b.abs())
        .fold(0.0, f64::max);
    checks.push(("ls recovery", e <= 1e-8, format!("{e:.1e}")));

    let noisy: Vec<Complex64> = g.iter().map(|v| v * Complex64::new(1.0 + rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05))).collect();
    let q: Vec<Complex64> = freqs.iter().map(|f| Complex64::new(0.0, TAU * f)).collect();
    let reg = build_regression(&vec![Complex64::new(1.0, 0.0); freqs.len()], &noisy, &q, 2, 2, Basis::Continuous).unwrap();
    let ls = solve_ls(&reg.design, &reg.target).unwrap();
    let wls = solve_wls(&reg.design, &reg.target, &WeightProfile::uniform(freqs.len())).unwrap();
    let e = ls.iter().zip(wls.iter()).map(|(a, b)| (a - b).abs() / a.abs().max(1.0)).fold(0.0, f64::max);
    checks.push(("wls uniform", e <= 1e-12, format!("{e:.1e}")));

    let reals: Vec<RealizationFrf> = (0..4).map(lti_realization).collect();
    let est = bla(&reals).unwrap();
    let (mut e, mut s2) = (0.0f64, 0.0f64);
    for p in est.excited_points() {
        e = e.max((p.g - 1.0 / Complex64::new(1.0, TAU * p.freq)).norm());
        s2 = s2.max(p.sigma2_total).max(p.sigma2_noise);
    }
    checks.push(("bla of lti", e <= 1e-8 && s2 <= 1e-14, format!("{e:.1e}, var {s2:.1e}")));

    let sched = LpvSchedule::published();
    let mut e = 0.0f64;
    for u in [100.0, 420.0, 860.0] {
        let tf = eval_schedule(&sched, u, RangePolicy::Strict).unwrap().tf();
        let ss = lpv_state_space(&sched, u, RangePolicy::Strict).unwrap();
        for _ in 0..100 {
            let f = 10f64.powf(rng.gen_range(-4.0..1.0));
            let (a, b) = (ss.eval_hz(f), tf.eval_hz(f));
            e = e.max((a - b).norm() / b.norm());
        }
    }
    checks.push(("state space frf", e <= 1e-10, format!("{e:.1e}")));

    let mut e = 0.0f64;
    for _ in 0..100 {
        let tf = RationalTf::continuous(
            vec![rng.gen_range(0.1..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(0.1..5.0)],
            vec![1.0, rng.gen_range(0.1..10.0), rng.gen_range(0.01..10.0)],
        );
        let back = zpk_to_tf(&tf_to_zpk(&tf).unwrap());
        for (x, y) in back.b.iter().chain(&back.a).zip(tf.b.iter().chain(&tf.a)) {
            e = e.max((x - y).abs() / y.abs().max(1.0));
        }
    }
    checks.push(("tf zpk round trip", e <= 1e-10, format!("{e:.1e}")));

    let y0 = sched.y_ss.eval(0.0);
    checks.push(("y_ss(0)", (y0 + 0.2).abs() <= 0.5, format!("{y0:.4}")));

    let spec = MultisineSpec::single_tone(3.0, 1.0, 0.5, 0.2);
    let sig = render(&spec, 8.0, 4).unwrap();
    let y: Vec<f64> = sig.samples.iter().map(|v| 2.0 * v - 1.0).collect();
    let n = sig.samples_per_period;
    let ur: Vec<&[f64]> = sig.samples.chunks(n).collect();
    let yr: Vec<&[f64]> = y.chunks(n).collect();
    let spectra = PeriodSpectra::from_periods(&ur, &yr, 0.5, &spec.harmonics).unwrap();
    let (_, sy) = period_statistics(&spectra).unwrap();
    let vmax = sy.variance.iter().copied().fold(0.0, f64::max);
    checks.push(("output variance", vmax == 0.0, format!("{vmax:.1e}")));

    let sine = MultisineSpec::single_tone(20.0, 5.0, 1.0, 0.3);
    let cf = crest_factor_of(&render(&sine, 1000.0, 1).unwrap().samples).unwrap();
    checks.push(("sine crest factor", (cf - SQRT_2).abs() <= 1e-3, format!("{cf:.6}")));

    let elapsed = start.elapsed();
    let pass = elapsed < Duration::from_secs(60) && checks.iter().all(|c| c.1);
    let detail: Vec<String> = checks
        .iter()
        .map(|(n, ok, v)| format!("{n} {v}{}", if *ok { "" } else { " FAILED" }))
        .collect();
    Verdict::new(pass, format!("{}; {:.2} s", detail.join(", "), elapsed.as_secs_f64()))
}

fn scratch() -> PathBuf {
    let dir = std::env::temp_dir().join(format!("photosid-acceptance-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn pipeline_verdicts(out: &std::path::Path) -> Result<[Verdict; 5], String> {
    let cfg = ExperimentConfig::desk();
    let report = identify(&cfg, out).map_err(|e| e.to_string())?;
    let v1 = criterion_1(&cfg, &report);
    let v2 = criterion_2(&report);
    let build = lpv_build(&cfg, out).map_err(|e| e.to_string())?;
    let v3 = criterion_3(&build.schedule);

    let start = Instant::now();
    let traces = simulate_cases(&cfg).map_err(|e| e.to_string())?;
    let built = validate_traces(&cfg, &traces, &build.schedule, out, "built").map_err(|e| e.to_string())?;
    let published = validate_traces(&cfg, &traces, &LpvSchedule::published(), out, "published").map_err(|e| e.to_string())?;
    let v4 = criterion_4(&built, &published, start.elapsed());

    let window = traces
        .iter()
        .flatten()
        .find(|t| t.name == "u530_multisine")
        .map(|t| t.window_len as f64 / t.sample_rate)
        .unwrap_or(f64::NAN);
    let v5 = criterion_5(&built, window);
    Ok([v1, v2, v3, v4, v5])
}

fn main() {
    let v6 = criterion_6();
    let out = scratch();
    let mut verdicts: Vec<Verdict> = match pipeline_verdicts(&out) {
        Ok(v) => v.into_iter().collect(),
        Err(e) => (0..5).map(|_| Verdict::new(false, format!("pipeline error: {e}"))).collect(),
    };
    verdicts.push(v6);
    let mut failed = 0;
    for (i, v) in verdicts.iter().enumerate() {
        println!("criterion {}: {} {}", i + 1, if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.pass);
    }
    let _ = std::fs::remove_dir_all(&out);
    if failed > 0 {
        println!("{failed} of {} criteria failed", verdicts.len());
        std::process::exit(1);
    }
}
