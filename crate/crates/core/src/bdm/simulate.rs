//! Time-domain simulation and steady states.

use std::cell::Cell;
use std::path::Path;

use nalgebra::{SMatrix, SVector};
use thiserror::Error;

use super::light::LightProgram;
use super::model::{bdm_outputs, bdm_rhs, BdmState, STATE_DIM};
use super::{BdmError, BdmParameters};
use crate::io;
use crate::solver::{rk4_fixed, OdeSystem, Radau5, SolverError, SolverOptions, StepStats};

type Vec5 = SVector<f64, STATE_DIM>;
type Mat5 = SMatrix<f64, STATE_DIM, STATE_DIM>;

/// Bound violations above this fraction of a bound's range are reported.
pub const BOUND_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulationError {
    #[error("integration failed (last good time {last_good_time} s): {source}")]
    Integration {
        last_good_time: f64,
        #[source]
        source: SolverError,
    },
    #[error("invalid time span ({0}, {1})")]
    InvalidSpan(f64, f64),
    #[error("sample rate {sample_rate} Hz must exceed twice the highest program frequency {f_max} Hz")]
    SampleRate { sample_rate: f64, f_max: f64 },
    #[error("light program goes negative (minimum {0})")]
    NegativeLight(f64),
    #[error("initial state is not admissible: {0:?}")]
    InadmissibleStart(BdmState),
    #[error(transparent)]
    Model(#[from] BdmError),
    #[error(transparent)]
    SteadyState(#[from] SteadyStateError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SteadyStateError {
    #[error("steady state did not converge at u_dc = {u_dc}; best residual {best_residual:e} at {best_state:?}")]
    NoConvergence {
        u_dc: f64,
        best_residual: f64,
        best_state: [f64; STATE_DIM],
    },
    #[error("negative light level {0}")]
    NegativeLight(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Integrator {
    Radau5,
    /// Fixed-step RK4, for cross-checks on short spans only.
    Rk4 { step: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOptions {
    pub rtol: f64,
    /// Per-state absolute tolerance; derived from `rtol` when `None`.
    pub atol: Option<[f64; STATE_DIM]>,
    pub integrator: Integrator,
    pub h_max: Option<f64>,
    pub max_steps: usize,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-6,
            atol: None,
            integrator: Integrator::Radau5,
            h_max: None,
            max_steps: 50_000_000,
        }
    }
}

impl SimulationOptions {
    pub fn with_rtol(rtol: f64) -> Self {
        Self { rtol, ..Self::default() }
    }

    /// Absolute tolerances: 10^-3 rtol times each state's natural scale.
    pub fn atol_for(&self, p: &BdmParameters) -> [f64; STATE_DIM] {
        self.atol.unwrap_or_else(|| {
            let s = 1e-3 * self.rtol;
            [s * p.pq_tot, s, s, s * p.a_tot, s]
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationMeta {
    pub integrator: Integrator,
    pub rtol: f64,
    pub atol: [f64; STATE_DIM],
    pub stats: StepStats,
    /// Largest bound violation seen on the sample grid, as a fraction of
    /// the bound's range.
    pub max_bound_violation: f64,
    pub warnings: Vec<String>,
}

/// Sampled simulation result. Every vector has one entry per sample time.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub sample_rate: f64,
    pub t: Vec<f64>,
    pub u: Vec<f64>,
    pub x: Vec<[f64; STATE_DIM]>,
    /// (ChlF yield, NPQ, O2 rate).
    pub y: Vec<[f64; 3]>,
    pub meta: SimulationMeta,
}

impl SimulationTrace {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Fluorescence yield y1.
    pub fn chlf(&self) -> Vec<f64> {
        self.y.iter().map(|y| y[0]).collect()
    }

    pub fn final_state(&self) -> BdmState {
        BdmState::from_array(*self.x.last().expect("trace is never empty"))
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let rows = (0..self.len()).map(|i| {
            let x = &self.x[i];
            let y = &self.y[i];
            [self.t[i], self.u[i], y[0], y[1], y[2], x[0], x[1], x[2], x[3], x[4]]
        });
        io::write_csv(
            path,
            &["t", "u", "y1", "y2", "y3", "x1", "x2", "x3", "x4", "x5"],
            rows,
        )
    }
}

/// The model driven by a light program, as an ODE system.
pub struct BdmSystem<'a> {
    pub params: &'a BdmParameters,
    pub program: &'a LightProgram,
    cache: [Cell<(f64, f64)>; 4],
    cursor: Cell<usize>,
}

impl<'a> BdmSystem<'a> {
    pub fn new(params: &'a BdmParameters, program: &'a LightProgram) -> Self {
        Self {
            params,
            program,
            cache: std::array::from_fn(|_| Cell::new((f64::NAN, 0.0))),
            cursor: Cell::new(0),
        }
    }

    /// L(t), remembering the last few times: the Newton iterations revisit
    /// the same stage times and multisines are costly to evaluate.
    pub fn light(&self, t: f64) -> f64 {
        for c in &self.cache {
            let (tc, l) = c.get();
            if tc == t {
                return l;
            }
        }
        let l = self.program.eval(t);
        let i = self.cursor.get();
        self.cache[i].set((t, l));
        self.cursor.set((i + 1) % self.cache.len());
        l
    }
}

impl OdeSystem<STATE_DIM> for BdmSystem<'_> {
    fn rhs(&self, t: f64, x: &Vec5) -> Result<Vec5, String> {
        let arr: [f64; STATE_DIM] = (*x).into();
        bdm_rhs(&arr, self.light(t), self.params)
            .map(Vec5::from)
            .map_err(|e| e.to_string())
    }

    fn jacobian(&self, t: f64, x: &Vec5, fx: &Vec5) -> Result<Mat5, String> {
        let light = self.light(t);
        state_jacobian(&(*x).into(), fx, light, self.params).map_err(|e| e.to_string())
    }
}

/// Forward-difference Jacobian of f with respect to x at fixed light.
fn state_jacobian(
    x: &[f64; STATE_DIM],
    fx: &Vec5,
    light: f64,
    p: &BdmParameters,
) -> Result<Mat5, BdmError> {
    let mut jac = Mat5::zeros();
    let mut xp = *x;
    for j in 0..STATE_DIM {
        let delta = f64::EPSILON.sqrt() * x[j].abs().max(1e-8);
        xp[j] = x[j] + delta;
        let fp = Vec5::from(bdm_rhs(&xp, light, p)?);
        xp[j] = x[j];
        jac.set_column(j, &((fp - fx) / delta));
    }
    Ok(jac)
}

/// Central-difference Jacobian, used by the steady-state Newton solver.
fn central_jacobian(x: &[f64; STATE_DIM], light: f64, p: &BdmParameters) -> Result<Mat5, BdmError> {
    let mut jac = Mat5::zeros();
    for j in 0..STATE_DIM {
        let delta = 1e-6 * x[j].abs().max(1e-6);
        let (mut xp, mut xm) = (*x, *x);
        xp[j] += delta;
        xm[j] -= delta;
        let fp = Vec5::from(bdm_rhs(&xp, light, p)?);
        let fm = Vec5::from(bdm_rhs(&xm, light, p)?);
        jac.set_column(j, &((fp - fm) / (2.0 * delta)));
    }
    Ok(jac)
}

/// Uniform sample times t0 + i / fs covering [t0, t1].
pub fn sample_times(t_span: (f64, f64), sample_rate: f64) -> Vec<f64> {
    let (t0, t1) = t_span;
    let n = ((t1 - t0) * sample_rate * (1.0 + 1e-12)).floor() as usize;
    (0..=n).map(|i| t0 + i as f64 / sample_rate).collect()
}

/// Simulates the model from `x0` (the steady state at the program's DC
/// level when `None`) and samples states and outputs on a uniform grid.
pub fn simulate(
    params: &BdmParameters,
    program: &LightProgram,
    x0: Option<BdmState>,
    t_span: (f64, f64),
    sample_rate: f64,
    options: &SimulationOptions,
) -> Result<SimulationTrace, SimulationError> {
    let (t0, t1) = t_span;
    if !(t0.is_finite() && t1.is_finite() && t1 >= t0) {
        return Err(SimulationError::InvalidSpan(t0, t1));
    }
    if let Some(f_max) = program.max_frequency() {
        if !(sample_rate > 2.0 * f_max) {
            return Err(SimulationError::SampleRate { sample_rate, f_max });
        }
    } else if !(sample_rate > 0.0) {
        return Err(SimulationError::SampleRate { sample_rate, f_max: 0.0 });
    }
    let minimum = program.minimum();
    if minimum < 0.0 {
        return Err(SimulationError::NegativeLight(minimum));
    }
    let x0 = match x0 {
        Some(x) => x,
        None => steady_state(params, program.dc_level(), &SteadyStateOptions::default())?.state,
    };
    if !(x0.h_lumen > 0.0) || x0.to_array().iter().any(|v| !v.is_finite()) {
        return Err(SimulationError::InadmissibleStart(x0));
    }

    let times = sample_times(t_span, sample_rate);
    let atol = options.atol_for(params);
    let system = BdmSystem::new(params, program);
    let mut states: Vec<[f64; STATE_DIM]> = Vec::with_capacity(times.len());
    states.push(x0.to_array());
    let mut stats = StepStats::default();

    match options.integrator {
        Integrator::Radau5 => {
            let mut solver_opts = SolverOptions::new(options.rtol, atol.to_vec());
            solver_opts.max_steps = options.max_steps;
            let h_max = options.h_max.or(match program {
                LightProgram::Sampled(s) => Some(1.0 / s.sample_rate),
                _ => None,
            });
            if let Some(h) = h_max {
                solver_opts.h_max = h;
            }
            let mut solver =
                Radau5::new(solver_opts).map_err(|source| SimulationError::Integration {
                    last_good_time: t0,
                    source,
                })?;
            let mut next = 1;
            let mut last_good = t0;
            let result = solver.integrate(&system, t0, t1, Vec5::from(x0.to_array()), |step| {
                let end = step.t0 + step.h;
                while next < times.len() && times[next] <= end {
                    states.push(step.eval(times[next]).into());
                    next += 1;
                }
                last_good = end;
            });
            stats = solver.stats.clone();
            let x_end = result.map_err(|source| SimulationError::Integration {
                last_good_time: last_good,
                source,
            })?;
            // A final sample can sit within rounding of t1.
            while states.len() < times.len() {
                states.push(x_end.into());
            }
        }
        Integrator::Rk4 { step } => {
            // Grid-aligned fixed steps, so samples need no interpolation.
            let per_sample = (1.0 / (sample_rate * step)).round().max(1.0) as usize;
            let h = 1.0 / (sample_rate * per_sample as f64);
            let mut count = 0usize;
            let mut last_good = t0;
            let result = rk4_fixed(&system, t0, t1, Vec5::from(x0.to_array()), h, |t, x| {
                if count > 0 && count % per_sample == 0 && states.len() < times.len() {
                    states.push((*x).into());
                }
                count += 1;
                last_good = t;
            });
            let x_end = result.map_err(|source| SimulationError::Integration {
                last_good_time: last_good,
                source,
            })?;
            stats.accepted = count.saturating_sub(1);
            stats.h_last = h;
            while states.len() < times.len() {
                states.push(x_end.into());
            }
        }
    }

    let mut u = Vec::with_capacity(times.len());
    let mut y = Vec::with_capacity(times.len());
    let mut max_violation = 0.0f64;
    let mut worst_time = t0;
    for (t, x) in times.iter().zip(&states) {
        let light = program.eval(*t);
        u.push(light);
        y.push(bdm_outputs(x, light, params)?.to_array());
        let v = BdmState::from_array(*x).bound_violation(params);
        if v > max_violation {
            max_violation = v;
            worst_time = *t;
        }
    }
    let mut warnings = Vec::new();
    if max_violation > BOUND_TOLERANCE {
        warnings.push(format!(
            "state bound violated by {max_violation:.3e} of range at t = {worst_time} s"
        ));
    }
    Ok(SimulationTrace {
        sample_rate,
        t: times,
        u,
        x: states,
        y,
        meta: SimulationMeta {
            integrator: options.integrator,
            rtol: options.rtol,
            atol,
            stats,
            max_bound_violation: max_violation,
            warnings,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyStateOptions {
    /// Tolerance on max_i |f_i| / max(|x_i|, scale_i), in s^-1.
    pub residual_tol: f64,
    pub max_newton: usize,
    /// Length of the seeding integration, in s.
    pub seed_horizon: f64,
    /// Start of the seeding integration.
    pub seed: Option<BdmState>,
}

impl Default for SteadyStateOptions {
    fn default() -> Self {
        Self {
            residual_tol: 1e-9,
            max_newton: 60,
            seed_horizon: 3000.0,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyState {
    pub state: BdmState,
    /// ChlF yield at the steady state.
    pub y_ss: f64,
    pub residual: f64,
}

/// Generic starting point for steady-state searches.
pub fn nominal_state(p: &BdmParameters) -> BdmState {
    BdmState {
        pq: 0.5 * p.pq_tot,
        h_lumen: 0.5,
        fq_act: 0.1,
        atp: 0.3 * p.a_tot,
        pi_ox: 0.5,
    }
}

fn residual_scale(p: &BdmParameters) -> [f64; STATE_DIM] {
    [1e-3 * p.pq_tot, 1e-3, 1e-3, 1e-3 * p.a_tot, 1e-3]
}

fn scaled_residual(x: &[f64; STATE_DIM], f: &[f64; STATE_DIM], p: &BdmParameters) -> f64 {
    let s = residual_scale(p);
    (0..STATE_DIM)
        .map(|i| f[i].abs() / x[i].abs().max(s[i]))
        .fold(0.0, f64::max)
}

/// Equilibrium of the model under constant light: a stiff integration
/// from the seed state followed by damped Newton on f(x, u_dc) = 0.
pub fn steady_state(
    params: &BdmParameters,
    u_dc: f64,
    options: &SteadyStateOptions,
) -> Result<SteadyState, SteadyStateError> {
    if !(u_dc >= 0.0) {
        return Err(SteadyStateError::NegativeLight(u_dc));
    }
    let seed = options.seed.unwrap_or_else(|| nominal_state(params));
    let mut best = (f64::INFINITY, seed.to_array());
    let fail = |best: (f64, [f64; STATE_DIM])| SteadyStateError::NoConvergence {
        u_dc,
        best_residual: best.0,
        best_state: best.1,
    };

    let mut x = seed.to_array();
    let program = LightProgram::Constant(u_dc);
    let system = BdmSystem::new(params, &program);
    let atol = SimulationOptions::with_rtol(1e-8).atol_for(params);
    let mut horizon = options.seed_horizon;
    for _attempt in 0..3 {
        if horizon > 0.0 {
            let mut opts = SolverOptions::new(1e-8, atol.to_vec());
            opts.max_steps = 1_000_000;
            let mut solver = Radau5::new(opts).map_err(|_| fail(best))?;
            match solver.integrate(&system, 0.0, horizon, Vec5::from(x), |_| {}) {
                Ok(v) => x = v.into(),
                Err(_) => return Err(fail(best)),
            }
        }
        match newton(params, u_dc, x, options) {
            Ok((state, residual)) => {
                let y_ss = bdm_outputs(&state, u_dc, params)
                    .map_err(|_| fail((residual, state)))?
                    .chlf;
                return Ok(SteadyState {
                    state: BdmState::from_array(state),
                    y_ss,
                    residual,
                });
            }
            Err((r, state)) => {
                if r < best.0 {
                    best = (r, state);
                }
                x = state;
                horizon = horizon.max(1000.0) * 3.0;
            }
        }
    }
    Err(fail(best))
}

fn newton(
    p: &BdmParameters,
    u_dc: f64,
    mut x: [f64; STATE_DIM],
    options: &SteadyStateOptions,
) -> Result<([f64; STATE_DIM], f64), (f64, [f64; STATE_DIM])> {
    let eval = |x: &[f64; STATE_DIM]| bdm_rhs(x, u_dc, p).ok().map(|f| (scaled_residual(x, &f, p), f));
    let Some((mut r, mut f)) = eval(&x) else {
        return Err((f64::INFINITY, x));
    };
    for _ in 0..options.max_newton {
        if r <= options.residual_tol {
            return Ok((x, r));
        }
        let Ok(jac) = central_jacobian(&x, u_dc, p) else {
            return Err((r, x));
        };
        let Some(step) = jac.lu().solve(&(-Vec5::from(f))) else {
            return Err((r, x));
        };
        let mut lambda = 1.0;
        let mut improved = false;
        while lambda > 1e-6 {
            let trial: [f64; STATE_DIM] = (Vec5::from(x) + step * lambda).into();
            if trial[1] > 0.0 {
                if let Some((rt, ft)) = eval(&trial) {
                    if rt < r {
                        x = trial;
                        r = rt;
                        f = ft;
                        improved = true;
                        break;
                    }
                }
            }
            lambda *= 0.5;
        }
        if !improved {
            break;
        }
    }
    if r <= options.residual_tol {
        Ok((x, r))
    } else {
        Err((r, x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> BdmParameters {
        BdmParameters::table_defaults(0.25)
    }

    #[test]
    fn zero_span_trace_holds_only_x0() {
        let p = params();
        let x0 = nominal_state(&p);
        let trace = simulate(
            &p,
            &LightProgram::Constant(100.0),
            Some(x0),
            (5.0, 5.0),
            10.0,
            &SimulationOptions::default(),
        )
        .unwrap();
        assert_eq!(trace.len(), 1);
        assert_eq!(trace.x[0], x0.to_array());
        assert_eq!(trace.y[0], bdm_outputs(&x0.to_array(), 100.0, &p).unwrap().to_array());
    }

    #[test]
    fn steady_state_at_100() {
        let p = params();
        let ss = steady_state(&p, 100.0, &SteadyStateOptions::default()).unwrap();
        let f = bdm_rhs(&ss.state.to_array(), 100.0, &p).unwrap();
        assert!(scaled_residual(&ss.state.to_array(), &f, &p) <= 1e-9);
        assert!((ss.state.pq - 3.41649).abs() < 1e-4, "{:?}", ss.state);
        assert!((ss.y_ss - 0.303434).abs() < 1e-5);
    }

    #[test]
    fn negative_light_rejected() {
        let p = params();
        let err = simulate(
            &p,
            &LightProgram::Constant(-1.0),
            Some(nominal_state(&p)),
            (0.0, 1.0),
            10.0,
            &SimulationOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, SimulationError::NegativeLight(_)));
    }

    #[test]
    fn grid_is_uniform_and_inclusive() {
        let t = sample_times((0.0, 1.0), 10.0);
        assert_eq!(t.len(), 11);
        assert_eq!(t[10], 1.0);
        assert!(t.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn rk4_agrees_with_radau_on_short_span() {
        let p = params();
        let program = LightProgram::Sine {
            u_dc: 100.0,
            amplitude: 20.0,
            frequency: 1.0,
            phase: 0.0,
        };
        let x0 = steady_state(&p, 100.0, &SteadyStateOptions::default()).unwrap().state;
        let radau = simulate(&p, &program, Some(x0), (0.0, 2.0), 20.0, &SimulationOptions::with_rtol(1e-9)).unwrap();
        let rk = simulate(
            &p,
            &program,
            Some(x0),
            (0.0, 2.0),
            20.0,
            &SimulationOptions {
                integrator: Integrator::Rk4 { step: 2e-6 },
                ..SimulationOptions::default()
            },
        )
        .unwrap();
        assert_eq!(radau.len(), rk.len());
        for (a, b) in radau.y.iter().zip(&rk.y) {
            assert!((a[0] - b[0]).abs() < 1e-7 * a[0].abs(), "{a:?} {b:?}");
        }
    }
}
