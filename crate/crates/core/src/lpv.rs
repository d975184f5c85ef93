//! Linear parameter-varying model scheduled on the DC light level: gain,
//! pole and zero schedules, the steady-state map, state-space snapshots and
//! simulation in perturbation coordinates.

use std::f64::consts::TAU;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, RowVector2, Vector2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tf::{lstsq, RationalTf, ZpkModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpvError {
    #[error("u_dc = {u} outside the validity range [{lo}, {hi}]")]
    OutOfRange { u: f64, lo: f64, hi: f64 },
    #[error("need at least {needed} local models, got {got}")]
    TooFewModels { needed: usize, got: usize },
    #[error("local model at u_dc = {0} is not second order")]
    WrongOrder(f64),
    #[error("local model without a u_dc tag")]
    Untagged,
    #[error("ambiguous {what} tracking between u_dc = {from} and u_dc = {to}")]
    Tracking { what: &'static str, from: f64, to: f64 },
    #[error("fit failed for {curve}: {reason}")]
    Fit { curve: &'static str, reason: String },
    #[error("R^2 undefined: reference series is constant")]
    ConstantReference,
    #[error("series lengths differ or are too short ({0}, {1})")]
    Length(usize, usize),
    #[error("sample rate must be positive")]
    SampleRate,
    #[error("schedule file: {0}")]
    File(String),
}

/// One term sign * u^power / divisor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolyTerm {
    pub power: u32,
    pub sign: f64,
    pub divisor: f64,
}

/// c + sum_k sign_k u^k / divisor_k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleCurve {
    pub constant: f64,
    #[serde(default, rename = "term")]
    pub terms: Vec<PolyTerm>,
}

impl ScheduleCurve {
    /// From the constant and signed divisors of u, u^2, ...
    pub fn from_divisors(constant: f64, signed_divisors: &[f64]) -> Self {
        let terms = signed_divisors
            .iter()
            .enumerate()
            .map(|(i, &d)| PolyTerm {
                power: i as u32 + 1,
                sign: d.signum(),
                divisor: d.abs(),
            })
            .collect();
        Self { constant, terms }
    }

    /// From power-basis coefficients c_0, c_1, ... Zero coefficients are
    /// dropped.
    pub fn from_coefficients(c: &[f64]) -> Self {
        let terms = c
            .iter()
            .enumerate()
            .skip(1)
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, &v)| PolyTerm {
                power: i as u32,
                sign: v.signum(),
                divisor: 1.0 / v.abs(),
            })
            .collect();
        Self { constant: c.first().copied().unwrap_or(0.0), terms }
    }

    pub fn coefficients(&self) -> Vec<f64> {
        let deg = self.terms.iter().map(|t| t.power as usize).max().unwrap_or(0);
        let mut c = vec![0.0; deg + 1];
        c[0] = self.constant;
        for t in &self.terms {
            c[t.power as usize] += t.sign / t.divisor;
        }
        c
    }

    pub fn eval(&self, u: f64) -> f64 {
        self.terms
            .iter()
            .fold(self.constant, |acc, t| acc + t.sign * u.powi(t.power as i32) / t.divisor)
    }
}

/// y_ss(u) = a0 + sum_n a_n sin(2 pi n f0 u) + b_n cos(2 pi n f0 u).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierMap {
    pub a0: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub f0: f64,
}

impl FourierMap {
    pub fn eval(&self, u: f64) -> f64 {
        let mut y = self.a0;
        for (n, (a, b)) in self.a.iter().zip(&self.b).enumerate() {
            let x = TAU * (n + 1) as f64 * self.f0 * u;
            y += a * x.sin() + b * x.cos();
        }
        y
    }
}

/// Coefficient of determination per fitted curve.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleFitQuality {
    pub k: Option<f64>,
    pub p1: Option<f64>,
    pub p2: Option<f64>,
    pub z1: Option<f64>,
    pub z2: Option<f64>,
    pub y_ss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LpvSchedule {
    #[serde(rename = "K")]
    pub k: ScheduleCurve,
    #[serde(rename = "P1")]
    pub p1: ScheduleCurve,
    #[serde(rename = "P2")]
    pub p2: ScheduleCurve,
    #[serde(rename = "Z1")]
    pub z1: ScheduleCurve,
    #[serde(rename = "Z2")]
    pub z2: ScheduleCurve,
    pub y_ss: FourierMap,
    pub u_min: f64,
    pub u_max: f64,
    #[serde(default)]
    pub r2: ScheduleFitQuality,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RangePolicy {
    Strict,
    Clamp,
    Extrapolate,
}

/// Schedule values at one operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleValues {
    pub u_dc: f64,
    pub k: f64,
    pub z1: f64,
    pub z2: f64,
    pub p1: f64,
    pub p2: f64,
    pub y_ss: f64,
    /// (b0, b1, b2)
    pub b: [f64; 3],
    /// (a1, a2)
    pub a: [f64; 2],
}

impl ScheduleValues {
    pub fn tf(&self) -> RationalTf {
        RationalTf::continuous(self.b.to_vec(), vec![1.0, self.a[0], self.a[1]])
    }

    pub fn zpk(&self) -> ZpkModel {
        ZpkModel {
            gain: self.k,
            zeros: vec![Complex64::new(self.z1, 0.0), Complex64::new(self.z2, 0.0)],
            poles: vec![Complex64::new(self.p1, 0.0), Complex64::new(self.p2, 0.0)],
            u_dc: Some(self.u_dc),
            notes: Vec::new(),
        }
    }
}

/// (b0, b1, b2, a1, a2) from gain, zeros and poles.
pub fn coefficient_map(k: f64, z1: f64, z2: f64, p1: f64, p2: f64) -> ([f64; 3], [f64; 2]) {
    ([k, (-z1 - z2) * k, z1 * z2 * k], [-p1 - p2, p1 * p2])
}

impl LpvSchedule {
    /// The published schedule for the BDM over [100, 1000].
    pub fn published() -> Self {
        Self {
            k: ScheduleCurve::from_divisors(3.97e-6, &[5.62e8, -2.17e10, 2.76e13, -1.17e16]),
            p1: ScheduleCurve::from_divisors(-1.11e-2, &[-7.48e2, 2.19e5]),
            p2: ScheduleCurve::from_divisors(-9.08e-3, &[2.82e5, -7.45e8]),
            z1: ScheduleCurve {
                constant: -637.87,
                terms: vec![
                    PolyTerm { power: 1, sign: -1.0, divisor: 1.0 / 1.49 },
                    PolyTerm { power: 2, sign: -1.0, divisor: 1.58e3 },
                ],
            },
            z2: ScheduleCurve::from_divisors(-2.98e-3, &[1.78e5, 8.46e9]),
            y_ss: FourierMap {
                a0: -20038.0,
                a: vec![7236.8, -5640.9, 1349.2],
                b: vec![29213.0, -10688.0, 1512.8],
                f0: 6.7e-5,
            },
            u_min: 100.0,
            u_max: 1000.0,
            r2: ScheduleFitQuality::default(),
        }
    }

    fn resolve(&self, u: f64, policy: RangePolicy) -> Result<f64, LpvError> {
        let inside = u >= self.u_min && u <= self.u_max;
        match policy {
            _ if inside => Ok(u),
            RangePolicy::Strict => Err(LpvError::OutOfRange { u, lo: self.u_min, hi: self.u_max }),
            RangePolicy::Clamp => Ok(u.clamp(self.u_min, self.u_max)),
            RangePolicy::Extrapolate => Ok(u),
        }
    }

    pub fn to_schedule_string(&self) -> String {
        toml::to_string(self).expect("schedule serialises")
    }

    pub fn from_schedule_str(text: &str) -> Result<Self, LpvError> {
        toml::from_str(text).map_err(|e| LpvError::File(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_schedule_string())
    }

    pub fn load(path: &Path) -> Result<Self, LpvError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LpvError::File(format!("{}: {e}", path.display())))?;
        Self::from_schedule_str(&text)
    }
}

pub fn eval_schedule(
    schedule: &LpvSchedule,
    u_dc: f64,
    policy: RangePolicy,
) -> Result<ScheduleValues, LpvError> {
    let u = schedule.resolve(u_dc, policy)?;
    let (k, z1, z2, p1, p2) = (
        schedule.k.eval(u),
        schedule.z1.eval(u),
        schedule.z2.eval(u),
        schedule.p1.eval(u),
        schedule.p2.eval(u),
    );
    let (b, a) = coefficient_map(k, z1, z2, p1, p2);
    Ok(ScheduleValues {
        u_dc: u,
        k,
        z1,
        z2,
        p1,
        p2,
        y_ss: schedule.y_ss.eval(u),
        b,
        a,
    })
}

/// Companion-form realization at a frozen operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpvStateSpace {
    pub a: Matrix2<f64>,
    pub b: Vector2<f64>,
    pub c: RowVector2<f64>,
    pub d: f64,
    pub u_dc: f64,
}

impl LpvStateSpace {
    pub fn from_coefficients(b: [f64; 3], a: [f64; 2], u_dc: f64) -> Self {
        let [b0, b1, b2] = b;
        let [a1, a2] = a;
        Self {
            a: Matrix2::new(0.0, 1.0, -a2, -a1),
            b: Vector2::new(0.0, 1.0),
            c: RowVector2::new(b2 - b0 * a2, b1 - b0 * a1),
            d: b0,
            u_dc,
        }
    }

    /// C (sI - A)^-1 B + D.
    pub fn eval_s(&self, s: Complex64) -> Complex64 {
        let m = Matrix2::<Complex64>::identity() * s - self.a.map(Complex64::from);
        let x = m
            .lu()
            .solve(&self.b.map(Complex64::from))
            .unwrap_or_else(|| Vector2::repeat(Complex64::new(f64::NAN, f64::NAN)));
        (self.c.map(Complex64::from) * x)[(0, 0)] + self.d
    }

    pub fn eval_hz(&self, f: f64) -> Complex64 {
        self.eval_s(Complex64::new(0.0, TAU * f))
    }
}

pub fn lpv_state_space(
    schedule: &LpvSchedule,
    u_dc: f64,
    policy: RangePolicy,
) -> Result<LpvStateSpace, LpvError> {
    let v = eval_schedule(schedule, u_dc, policy)?;
    Ok(LpvStateSpace::from_coefficients(v.b, v.a, v.u_dc))
}

/// Input split u = u_dc + u_bar and output rule y = y_bar + y_ss(u_dc).
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingDecomposition {
    pub u_dc: f64,
    pub u_bar: Vec<f64>,
}

impl OperatingDecomposition {
    pub fn new(u: &[f64], u_dc: f64) -> Self {
        Self { u_dc, u_bar: u.iter().map(|v| v - u_dc).collect() }
    }

    /// Splits at the record mean.
    pub fn at_mean(u: &[f64]) -> Self {
        let mean = u.iter().sum::<f64>() / u.len().max(1) as f64;
        Self::new(u, mean)
    }

    pub fn reconstruct(y_bar: &[f64], y_ss: f64) -> Vec<f64> {
        y_bar.iter().map(|v| v + y_ss).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SchedulingPolicy {
    /// One scheduling value for the whole record.
    Frozen(f64),
    /// Trailing mean of the input over `window` samples, re-evaluated each
    /// sample.
    WindowedMean { window: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpvTrace {
    pub y: Vec<f64>,
    pub y_bar: Vec<f64>,
    pub u_dc: Vec<f64>,
}

/// Exact discretization of x' = A x + B u for an input that is linear
/// between samples: x+ = Phi x + G0 u_k + G1 (u_{k+1} - u_k).
fn foh_discretize(ss: &LpvStateSpace, h: f64) -> (Matrix2<f64>, Vector2<f64>, Vector2<f64>) {
    let mut m = Matrix4::<f64>::zeros();
    m.fixed_view_mut::<2, 2>(0, 0).copy_from(&ss.a);
    m.fixed_view_mut::<2, 1>(0, 2).copy_from(&ss.b);
    m[(2, 3)] = 1.0 / h;
    let e = (m * h).exp();
    (
        e.fixed_view::<2, 2>(0, 0).into_owned(),
        e.fixed_view::<2, 1>(0, 2).into_owned(),
        e.fixed_view::<2, 1>(0, 3).into_owned(),
    )
}

/// Simulates the LPV model on a uniformly sampled input from zero state.
pub fn lpv_simulate(
    schedule: &LpvSchedule,
    u: &[f64],
    sample_rate: f64,
    scheduling: SchedulingPolicy,
    range: RangePolicy,
) -> Result<LpvTrace, LpvError> {
    if !(sample_rate > 0.0 && sample_rate.is_finite()) {
        return Err(LpvError::SampleRate);
    }
    let h = 1.0 / sample_rate;
    let n = u.len();
    let mut y = Vec::with_capacity(n);
    let mut y_bar = Vec::with_capacity(n);
    let mut u_dc = Vec::with_capacity(n);
    match scheduling {
        SchedulingPolicy::Frozen(value) => {
            let v = eval_schedule(schedule, value, range)?;
            let ss = LpvStateSpace::from_coefficients(v.b, v.a, v.u_dc);
            let (phi, g0, g1) = foh_discretize(&ss, h);
            let mut x = Vector2::zeros();
            for k in 0..n {
                let ub = u[k] - value;
                let yb = (ss.c * x)[(0, 0)] + ss.d * ub;
                y_bar.push(yb);
                y.push(yb + v.y_ss);
                u_dc.push(value);
                if k + 1 < n {
                    let ub_next = u[k + 1] - value;
                    x = phi * x + g0 * ub + g1 * (ub_next - ub);
                }
            }
        }
        SchedulingPolicy::WindowedMean { window } => {
            let window = window.max(1);
            let mut sum = 0.0;
            let mut means = Vec::with_capacity(n);
            for k in 0..n {
                sum += u[k];
                if k >= window {
                    sum -= u[k - window];
                }
                means.push(sum / (k + 1).min(window) as f64);
            }
            let values = means
                .iter()
                .map(|&m| eval_schedule(schedule, m, range))
                .collect::<Result<Vec<_>, _>>()?;
            let systems: Vec<LpvStateSpace> = values
                .iter()
                .map(|v| LpvStateSpace::from_coefficients(v.b, v.a, v.u_dc))
                .collect();
            let mut x = Vector2::zeros();
            for k in 0..n {
                let ub = u[k] - means[k];
                let yb = (systems[k].c * x)[(0, 0)] + systems[k].d * ub;
                y_bar.push(yb);
                y.push(yb + values[k].y_ss);
                u_dc.push(means[k]);
                if k + 1 < n {
                    let ub_next = u[k + 1] - means[k + 1];
                    let (s0, s1) = (&systems[k], &systems[k + 1]);
                    let lhs = Matrix2::identity() - s1.a * (0.5 * h);
                    let rhs = (Matrix2::identity() + s0.a * (0.5 * h)) * x
                        + (s0.b * ub + s1.b * ub_next) * (0.5 * h);
                    x = lhs.lu().solve(&rhs).unwrap_or(rhs);
                }
            }
        }
    }
    Ok(LpvTrace { y, y_bar, u_dc })
}

/// 1 - SS_res / SS_tot.
pub fn r_squared(reference: &[f64], model: &[f64]) -> Result<f64, LpvError> {
    if reference.len() != model.len() || reference.len() < 2 {
        return Err(LpvError::Length(reference.len(), model.len()));
    }
    let mean = reference.iter().sum::<f64>() / reference.len() as f64;
    let ss_tot: f64 = reference.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(LpvError::ConstantReference);
    }
    if model.iter().any(|v| !v.is_finite()) {
        // Diverged model output.
        return Ok(f64::NEG_INFINITY);
    }
    let ss_res: f64 = reference.iter().zip(model).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleFitOptions {
    pub gain_degree: usize,
    pub pole_zero_degree: usize,
    pub harmonics: usize,
    /// Fundamental of the steady-state map (cycles per uE m^-2 s^-1).
    pub f0_ss: f64,
    /// Refine `f0_ss` by a bracketed 1-D search around the given value.
    pub estimate_f0: bool,
    pub min_models: usize,
}

impl Default for ScheduleFitOptions {
    fn default() -> Self {
        Self {
            gain_degree: 4,
            pole_zero_degree: 2,
            harmonics: 3,
            f0_ss: 6.7e-5,
            estimate_f0: false,
            min_models: 6,
        }
    }
}

/// Poles and zeros relabelled consistently along the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackedModels {
    pub u_dc: Vec<f64>,
    pub k: Vec<f64>,
    pub p1: Vec<Complex64>,
    pub p2: Vec<Complex64>,
    pub z1: Vec<Complex64>,
    pub z2: Vec<Complex64>,
}

/// Labels two-element root sets along an ascending grid: the first point
/// puts the larger magnitude first, later points follow nearest-neighbour
/// continuation.
fn track_pairs(
    what: &'static str,
    u: &[f64],
    roots: &[[Complex64; 2]],
) -> Result<Vec<[Complex64; 2]>, LpvError> {
    let mut out: Vec<[Complex64; 2]> = Vec::with_capacity(roots.len());
    for (i, r) in roots.iter().enumerate() {
        let pair = if i == 0 {
            if r[0].norm() >= r[1].norm() {
                *r
            } else {
                [r[1], r[0]]
            }
        } else {
            let prev = out[i - 1];
            let dist = |a: Complex64, b: Complex64| (a - b).norm() / a.norm().max(b.norm()).max(1e-300);
            let keep = dist(r[0], prev[0]) + dist(r[1], prev[1]);
            let swap = dist(r[1], prev[0]) + dist(r[0], prev[1]);
            let same_set = (r[0] - r[1]).norm() <= 1e-12 * r[0].norm().max(r[1].norm());
            if !same_set && (keep - swap).abs() <= 1e-3 * keep.max(swap) {
                return Err(LpvError::Tracking { what, from: u[i - 1], to: u[i] });
            }
            if keep <= swap {
                *r
            } else {
                [r[1], r[0]]
            }
        };
        out.push(pair);
    }
    Ok(out)
}

pub fn track_models(models: &[ZpkModel]) -> Result<TrackedModels, LpvError> {
    let mut sorted: Vec<&ZpkModel> = models.iter().collect();
    for m in &sorted {
        if m.u_dc.is_none() {
            return Err(LpvError::Untagged);
        }
    }
    sorted.sort_by(|a, b| a.u_dc.partial_cmp(&b.u_dc).unwrap());
    let u: Vec<f64> = sorted.iter().map(|m| m.u_dc.unwrap()).collect();
    let pairs = |sel: fn(&ZpkModel) -> &Vec<Complex64>| -> Result<Vec<[Complex64; 2]>, LpvError> {
        sorted
            .iter()
            .map(|m| {
                let r = sel(m);
                if r.len() != 2 {
                    Err(LpvError::WrongOrder(m.u_dc.unwrap()))
                } else {
                    Ok([r[0], r[1]])
                }
            })
            .collect()
    };
    let poles = track_pairs("pole", &u, &pairs(|m| &m.poles)?)?;
    let zeros = track_pairs("zero", &u, &pairs(|m| &m.zeros)?)?;
    Ok(TrackedModels {
        k: sorted.iter().map(|m| m.gain).collect(),
        p1: poles.iter().map(|p| p[0]).collect(),
        p2: poles.iter().map(|p| p[1]).collect(),
        z1: zeros.iter().map(|z| z[0]).collect(),
        z2: zeros.iter().map(|z| z[1]).collect(),
        u_dc: u,
    })
}

/// Least-squares polynomial of the given degree in u, returned in the
/// power basis, with its R^2. The fit runs in u / max|u| for conditioning.
pub fn fit_polynomial(u: &[f64], y: &[f64], degree: usize) -> Result<(Vec<f64>, f64), LpvError> {
    let fail = |reason: String| LpvError::Fit { curve: "polynomial", reason };
    if u.len() != y.len() || u.len() < degree + 1 {
        return Err(fail(format!("{} points for degree {degree}", u.len())));
    }
    let scale = u.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let design = DMatrix::from_fn(u.len(), degree + 1, |i, j| (u[i] / scale).powi(j as i32));
    let sol = lstsq(&design, &DVector::from_column_slice(y)).map_err(|e| fail(e.to_string()))?;
    let coeffs: Vec<f64> = (0..=degree).map(|j| sol.theta[j] / scale.powi(j as i32)).collect();
    let fitted: Vec<f64> = u
        .iter()
        .map(|&x| coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c))
        .collect();
    Ok((coeffs, r_squared(y, &fitted).unwrap_or(1.0)))
}

/// Least-squares Fourier map with a fixed fundamental, with its R^2.
pub fn fit_fourier(u: &[f64], y: &[f64], harmonics: usize, f0: f64) -> Result<(FourierMap, f64), LpvError> {
    let fail = |reason: String| LpvError::Fit { curve: "y_ss", reason };
    let cols = 1 + 2 * harmonics;
    if u.len() != y.len() || u.len() < cols {
        return Err(fail(format!("{} points for {harmonics} harmonics", u.len())));
    }
    let design = DMatrix::from_fn(u.len(), cols, |i, j| {
        if j == 0 {
            1.0
        } else {
            let n = (j + 1) / 2;
            let x = TAU * n as f64 * f0 * u[i];
            if j % 2 == 1 {
                x.sin()
            } else {
                x.cos()
            }
        }
    });
    let sol = lstsq(&design, &DVector::from_column_slice(y)).map_err(|e| fail(e.to_string()))?;
    let map = FourierMap {
        a0: sol.theta[0],
        a: (0..harmonics).map(|n| sol.theta[1 + 2 * n]).collect(),
        b: (0..harmonics).map(|n| sol.theta[2 + 2 * n]).collect(),
        f0,
    };
    let fitted: Vec<f64> = u.iter().map(|&x| map.eval(x)).collect();
    Ok((map, r_squared(y, &fitted).unwrap_or(1.0)))
}

fn fourier_sse(u: &[f64], y: &[f64], harmonics: usize, f0: f64) -> f64 {
    match fit_fourier(u, y, harmonics, f0) {
        Ok((m, _)) => u.iter().zip(y).map(|(&x, &v)| (m.eval(x) - v).powi(2)).sum(),
        Err(_) => f64::INFINITY,
    }
}

/// Golden-section search for the fundamental on [f0/3, 3 f0] in log space.
pub fn estimate_fundamental(u: &[f64], y: &[f64], harmonics: usize, f0: f64) -> f64 {
    let (mut lo, mut hi) = ((f0 / 3.0).ln(), (f0 * 3.0).ln());
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let cost = |x: f64| fourier_sse(u, y, harmonics, x.exp());
    let mut c = hi - g * (hi - lo);
    let mut d = lo + g * (hi - lo);
    let (mut fc, mut fd) = (cost(c), cost(d));
    for _ in 0..80 {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - g * (hi - lo);
            fc = cost(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + g * (hi - lo);
            fd = cost(d);
        }
    }
    (0.5 * (lo + hi)).exp()
}

/// Fits every schedule curve to tracked local models and steady states.
/// Complex poles or zeros contribute their real parts.
pub fn fit_schedules(
    models: &[ZpkModel],
    yss: &[(f64, f64)],
    options: &ScheduleFitOptions,
) -> Result<(LpvSchedule, TrackedModels), LpvError> {
    if models.len() < options.min_models {
        return Err(LpvError::TooFewModels { needed: options.min_models, got: models.len() });
    }
    let tracked = track_models(models)?;
    let u = &tracked.u_dc;
    let re = |v: &[Complex64]| v.iter().map(|z| z.re).collect::<Vec<f64>>();
    let curve = |name: &'static str, y: &[f64], degree: usize| {
        fit_polynomial(u, y, degree)
            .map(|(c, r2)| (ScheduleCurve::from_coefficients(&c), r2))
            .map_err(|e| LpvError::Fit { curve: name, reason: e.to_string() })
    };
    let (k, r2_k) = curve("K", &tracked.k, options.gain_degree)?;
    let (p1, r2_p1) = curve("P1", &re(&tracked.p1), options.pole_zero_degree)?;
    let (p2, r2_p2) = curve("P2", &re(&tracked.p2), options.pole_zero_degree)?;
    let (z1, r2_z1) = curve("Z1", &re(&tracked.z1), options.pole_zero_degree)?;
    let (z2, r2_z2) = curve("Z2", &re(&tracked.z2), options.pole_zero_degree)?;
    let mut ys: Vec<(f64, f64)> = yss.to_vec();
    ys.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let yu: Vec<f64> = ys.iter().map(|p| p.0).collect();
    let yv: Vec<f64> = ys.iter().map(|p| p.1).collect();
    let f0 = if options.estimate_f0 {
        estimate_fundamental(&yu, &yv, options.harmonics, options.f0_ss)
    } else {
        options.f0_ss
    };
    let (y_ss, r2_y) = fit_fourier(&yu, &yv, options.harmonics, f0)?;
    let lo = u.first().copied().unwrap().max(yu.first().copied().unwrap_or(f64::NEG_INFINITY));
    let hi = u.last().copied().unwrap().min(yu.last().copied().unwrap_or(f64::INFINITY));
    Ok((
        LpvSchedule {
            k,
            p1,
            p2,
            z1,
            z2,
            y_ss,
            u_min: lo,
            u_max: hi,
            r2: ScheduleFitQuality {
                k: Some(r2_k),
                p1: Some(r2_p1),
                p2: Some(r2_p2),
                z1: Some(r2_z1),
                z2: Some(r2_z2),
                y_ss: Some(r2_y),
            },
        },
        tracked,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coefficient_map_by_hand() {
        let (b, a) = coefficient_map(1.0, 0.0, 0.0, -1.0, -2.0);
        assert_eq!(b, [1.0, 0.0, 0.0]);
        assert_eq!(a, [3.0, 2.0]);
    }

    #[test]
    fn published_steady_state_at_zero() {
        let s = LpvSchedule::published();
        let y0 = s.y_ss.eval(0.0);
        assert!((y0 - (-0.2)).abs() < 1e-9, "{y0}");
    }

    #[test]
    fn published_curves_as_printed() {
        let s = LpvSchedule::published();
        let v = eval_schedule(&s, 100.0, RangePolicy::Strict).unwrap();
        assert!((v.p1 - (-1.11e-2 - 100.0 / 7.48e2 + 1e4 / 2.19e5)).abs() < 1e-15);
        assert!((v.z1 - (-637.87 - 149.0 - 1e4 / 1.58e3)).abs() < 1e-9);
        // the slow quadratic term overtakes the linear one above u ~ 327
        assert!(eval_schedule(&s, 300.0, RangePolicy::Strict).unwrap().p1 < 0.0);
        assert!(eval_schedule(&s, 400.0, RangePolicy::Strict).unwrap().p1 > 0.0);
        assert!(eval_schedule(&s, 50.0, RangePolicy::Strict).is_err());
        assert_eq!(eval_schedule(&s, 50.0, RangePolicy::Clamp).unwrap().u_dc, 100.0);
    }

    #[test]
    fn zero_feedthrough_realization() {
        let ss = LpvStateSpace::from_coefficients([0.0, 2.0, 3.0], [0.5, 0.25], 0.0);
        assert_eq!(ss.d, 0.0);
        assert_eq!(ss.c, RowVector2::new(3.0, 2.0));
        assert_eq!(ss.a[(0, 0)], 0.0);
        assert_eq!(ss.a[(0, 1)], 1.0);
    }

    #[test]
    fn r_squared_by_hand() {
        assert_eq!(r_squared(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap(), 0.5);
        assert_eq!(r_squared(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(r_squared(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert!(matches!(r_squared(&[1.0, 1.0], &[1.0, 2.0]), Err(LpvError::ConstantReference)));
        assert_eq!(r_squared(&[1.0, 2.0], &[1.0, f64::NAN]).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn zero_input_gives_steady_state() {
        let s = LpvSchedule::published();
        let u = vec![420.0; 50];
        let out = lpv_simulate(&s, &u, 10.0, SchedulingPolicy::Frozen(420.0), RangePolicy::Strict).unwrap();
        let yss = s.y_ss.eval(420.0);
        assert!(out.y.iter().all(|&y| y == yss));
        assert!(out.y_bar.iter().all(|&y| y == 0.0));
    }

    #[test]
    fn curves_from_coefficients() {
        let c = ScheduleCurve::from_coefficients(&[1.0, -0.5, 0.25]);
        assert_eq!(c.eval(2.0), 1.0 - 1.0 + 1.0);
        assert_eq!(c.coefficients(), vec![1.0, -0.5, 0.25]);
    }

    #[test]
    fn schedule_file_round_trip() {
        let s = LpvSchedule::published();
        let back = LpvSchedule::from_schedule_str(&s.to_schedule_string()).unwrap();
        assert_eq!(s, back);
    }
}
