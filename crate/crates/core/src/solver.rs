//! Stiff ODE integration.
//!
//! The default integrator is the three-stage Radau IIA collocation method
//! (order 5, L-stable) with simplified Newton iterations, an embedded
//! third-order error estimate and dense output from the collocation
//! polynomial. A fixed-step classical RK4 is kept for cross-checks on short
//! spans.

use nalgebra::{Complex, ComplexField, Matrix3, SMatrix, SVector, Vector3};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("right-hand side failed at t = {t}: {message}")]
    Rhs { t: f64, message: String },
    #[error("step budget of {max_steps} exhausted at t = {t}")]
    TooManySteps { t: f64, max_steps: usize },
    #[error("singular iteration matrix at t = {t}")]
    Singular { t: f64 },
    #[error("invalid solver options: {0}")]
    Options(String),
}

/// First-order system x' = f(t, x).
pub trait OdeSystem<const N: usize> {
    fn rhs(&self, t: f64, x: &SVector<f64, N>) -> Result<SVector<f64, N>, String>;

    /// Jacobian df/dx. The default uses forward differences.
    fn jacobian(
        &self,
        t: f64,
        x: &SVector<f64, N>,
        fx: &SVector<f64, N>,
    ) -> Result<SMatrix<f64, N, N>, String> {
        let mut jac = SMatrix::<f64, N, N>::zeros();
        let mut xp = *x;
        for j in 0..N {
            let delta = f64::EPSILON.sqrt() * x[j].abs().max(1e-8);
            xp[j] = x[j] + delta;
            let fp = self.rhs(t, &xp)?;
            xp[j] = x[j];
            jac.set_column(j, &((fp - fx) / delta));
        }
        Ok(jac)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub rtol: f64,
    /// Absolute tolerance per state component.
    pub atol: Vec<f64>,
    pub h_initial: Option<f64>,
    pub h_max: f64,
    pub h_min: f64,
    pub max_steps: usize,
}

impl SolverOptions {
    pub fn new(rtol: f64, atol: Vec<f64>) -> Self {
        Self {
            rtol,
            atol,
            h_initial: None,
            h_max: f64::INFINITY,
            h_min: 1e-14,
            max_steps: 50_000_000,
        }
    }

    fn check<const N: usize>(&self) -> Result<(), SolverError> {
        if !(self.rtol > 0.0 && self.rtol < 1.0) {
            return Err(SolverError::Options(format!("rtol = {}", self.rtol)));
        }
        if self.atol.len() != N || self.atol.iter().any(|a| !(*a > 0.0)) {
            return Err(SolverError::Options(format!(
                "atol must have {N} positive entries, got {:?}",
                self.atol
            )));
        }
        if !(self.h_max > 0.0) {
            return Err(SolverError::Options(format!("h_max = {}", self.h_max)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
    pub jacobian_evals: usize,
    pub newton_failures: usize,
    pub h_last: f64,
}

/// Radau IIA tableau and the real block form of its inverse.
struct Tableau {
    c: Vector3<f64>,
    #[cfg_attr(not(test), allow(dead_code))]
    a_inv: Matrix3<f64>,
    t: Matrix3<f64>,
    t_inv: Matrix3<f64>,
    /// Real eigenvalue of A^{-1}.
    gamma: f64,
    /// Complex pair alpha -/+ i*beta of A^{-1}, with the sign convention of `t`.
    alpha: f64,
    beta: f64,
    /// Error-estimate weights on z_i, and on h f(t0, y0).
    err_z: Vector3<f64>,
    err_f0: f64,
}

impl Tableau {
    fn new() -> Self {
        let s6 = 6f64.sqrt();
        let c = Vector3::new((4.0 - s6) / 10.0, (4.0 + s6) / 10.0, 1.0);
        let a = Matrix3::new(
            (88.0 - 7.0 * s6) / 360.0,
            (296.0 - 169.0 * s6) / 1800.0,
            (-2.0 + 3.0 * s6) / 225.0,
            (296.0 + 169.0 * s6) / 1800.0,
            (88.0 + 7.0 * s6) / 360.0,
            (-2.0 - 3.0 * s6) / 225.0,
            (16.0 - s6) / 36.0,
            (16.0 + s6) / 36.0,
            1.0 / 9.0,
        );
        let a_inv = a.try_inverse().expect("Radau IIA matrix is invertible");

        // Eigen-decomposition of A^{-1} into one real value and a complex pair.
        let eig = a_inv.complex_eigenvalues();
        let mut real = 0.0;
        let mut pair = Complex::new(0.0, 0.0);
        for e in eig.iter() {
            if e.im.abs() < 1e-12 {
                real = e.re;
            } else if e.im > 0.0 {
                pair = *e;
            }
        }
        let v_real = null_vector(&a_inv.map(Complex::from), Complex::from(real)).map(|z| z.re);
        let v_pair = null_vector(&a_inv.map(Complex::from), pair);
        let mut t = Matrix3::zeros();
        t.set_column(0, &v_real);
        t.set_column(1, &v_pair.map(|z| z.re));
        t.set_column(2, &v_pair.map(|z| z.im));
        let t_inv = t.try_inverse().expect("eigenbasis is invertible");
        let block = t_inv * a_inv * t;

        // Embedded order-3 formula on nodes (0, c1, c2, c3) with weight
        // gamma0 = 1/gamma on the explicit node.
        let gamma0 = 1.0 / real;
        let vander = Matrix3::new(1.0, 1.0, 1.0, c[0], c[1], c[2], c[0] * c[0], c[1] * c[1], 1.0);
        let b_hat = vander
            .try_inverse()
            .expect("distinct nodes")
            * Vector3::new(1.0 - gamma0, 0.5, 1.0 / 3.0);
        let b = a.row(2).transpose();
        let err_z = a_inv.transpose() * (b_hat - b);

        Self {
            c,
            a_inv,
            t,
            t_inv,
            gamma: block[(0, 0)],
            alpha: block[(1, 1)],
            beta: block[(1, 2)],
            err_z,
            err_f0: gamma0,
        }
    }
}

/// Null vector of the 3x3 singular matrix (M - lambda I), from a cross
/// product of two of its rows.
fn null_vector(m: &Matrix3<Complex<f64>>, lambda: Complex<f64>) -> Vector3<Complex<f64>> {
    let shifted = m - Matrix3::from_diagonal_element(lambda);
    let rows = [
        shifted.row(0).transpose(),
        shifted.row(1).transpose(),
        shifted.row(2).transpose(),
    ];
    let cross = |a: &Vector3<Complex<f64>>, b: &Vector3<Complex<f64>>| {
        Vector3::new(
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        )
    };
    let candidates = [
        cross(&rows[0], &rows[1]),
        cross(&rows[0], &rows[2]),
        cross(&rows[1], &rows[2]),
    ];
    let best = candidates
        .iter()
        .max_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap())
        .copied()
        .unwrap();
    // Normalise so the last nonzero component is real and positive.
    let pivot = best[2];
    best / pivot
}

/// LU factorisation with partial pivoting of a small fixed-size matrix.
struct SmallLu<T, const N: usize> {
    lu: SMatrix<T, N, N>,
    perm: [usize; N],
}

impl<T: ComplexField<RealField = f64> + Copy, const N: usize> SmallLu<T, N> {
    fn new(mut a: SMatrix<T, N, N>) -> Option<Self> {
        let mut perm = [0usize; N];
        for (i, p) in perm.iter_mut().enumerate() {
            *p = i;
        }
        for k in 0..N {
            let mut piv = k;
            let mut best = a[(k, k)].modulus();
            for i in (k + 1)..N {
                let m = a[(i, k)].modulus();
                if m > best {
                    best = m;
                    piv = i;
                }
            }
            if !(best > 0.0) || !best.is_finite() {
                return None;
            }
            if piv != k {
                a.swap_rows(k, piv);
                perm.swap(k, piv);
            }
            let inv = T::one() / a[(k, k)];
            for i in (k + 1)..N {
                let l = a[(i, k)] * inv;
                a[(i, k)] = l;
                for j in (k + 1)..N {
                    let u = a[(k, j)];
                    a[(i, j)] -= l * u;
                }
            }
        }
        Some(Self { lu: a, perm })
    }

    fn solve(&self, b: &SVector<T, N>) -> SVector<T, N> {
        let mut x = SVector::<T, N>::from_fn(|i, _| b[self.perm[i]]);
        for i in 0..N {
            for j in 0..i {
                let l = self.lu[(i, j)];
                let xj = x[j];
                x[i] -= l * xj;
            }
        }
        for i in (0..N).rev() {
            for j in (i + 1)..N {
                let u = self.lu[(i, j)];
                let xj = x[j];
                x[i] -= u * xj;
            }
            x[i] /= self.lu[(i, i)];
        }
        x
    }
}

/// Dense-output polynomial of one accepted step.
#[derive(Debug, Clone, Copy)]
pub struct DenseStep<const N: usize> {
    pub t0: f64,
    pub h: f64,
    y0: SVector<f64, N>,
    /// Newton form coefficients of the collocation polynomial in theta.
    coeffs: [SVector<f64, N>; 3],
    nodes: [f64; 3],
}

impl<const N: usize> DenseStep<N> {
    fn new(t0: f64, h: f64, y0: SVector<f64, N>, z: &[SVector<f64, N>; 3], c: &Vector3<f64>) -> Self {
        // Interpolate (0, 0), (c1, z1), (c2, z2), (c3, z3) in Newton form.
        let d1 = z[0] / c[0];
        let d2 = (z[1] - z[0]) / (c[1] - c[0]);
        let d3 = (z[2] - z[1]) / (c[2] - c[1]);
        let d12 = (d2 - d1) / c[1];
        let d23 = (d3 - d2) / (c[2] - c[0]);
        let d123 = (d23 - d12) / c[2];
        Self {
            t0,
            h,
            y0,
            coeffs: [d1, d12, d123],
            nodes: [0.0, c[0], c[1]],
        }
    }

    /// Collocation polynomial at time `t` (intended for t in [t0, t0 + h]).
    pub fn eval(&self, t: f64) -> SVector<f64, N> {
        let theta = (t - self.t0) / self.h;
        let w0 = theta - self.nodes[0];
        let w1 = w0 * (theta - self.nodes[1]);
        let w2 = w1 * (theta - self.nodes[2]);
        self.y0 + self.coeffs[0] * w0 + self.coeffs[1] * w1 + self.coeffs[2] * w2
    }

    /// Polynomial value at the start of the next step's nodes, used to seed
    /// the Newton iteration.
    fn extrapolate(&self, t: f64) -> SVector<f64, N> {
        self.eval(t)
    }
}

fn scaled_norm<const N: usize>(v: &SVector<f64, N>, scale: &SVector<f64, N>) -> f64 {
    (v.component_div(scale).norm_squared() / N as f64).sqrt()
}

/// Adaptive Radau IIA integrator.
pub struct Radau5<const N: usize> {
    tableau: Tableau,
    opts: SolverOptions,
    atol: SVector<f64, N>,
    fac_conv: f64,
    pub stats: StepStats,
}

const MAX_NEWTON: usize = 7;

impl<const N: usize> Radau5<N> {
    pub fn new(opts: SolverOptions) -> Result<Self, SolverError> {
        opts.check::<N>()?;
        let atol = SVector::<f64, N>::from_iterator(opts.atol.iter().copied());
        Ok(Self {
            tableau: Tableau::new(),
            opts,
            atol,
            fac_conv: 1.0,
            stats: StepStats::default(),
        })
    }

    fn rhs<S: OdeSystem<N>>(&mut self, sys: &S, t: f64, x: &SVector<f64, N>) -> Result<SVector<f64, N>, SolverError> {
        self.stats.rhs_evals += 1;
        let f = sys.rhs(t, x).map_err(|message| SolverError::Rhs { t, message })?;
        if f.iter().all(|v| v.is_finite()) {
            Ok(f)
        } else {
            Err(SolverError::NonFinite { t })
        }
    }

    /// Integrates from `t0` to `t_end`, calling `on_step` with the dense
    /// polynomial of every accepted step, in order. Returns the state at
    /// `t_end`.
    pub fn integrate<S, F>(
        &mut self,
        sys: &S,
        t0: f64,
        t_end: f64,
        x0: SVector<f64, N>,
        mut on_step: F,
    ) -> Result<SVector<f64, N>, SolverError>
    where
        S: OdeSystem<N>,
        F: FnMut(&DenseStep<N>),
    {
        if !(t_end >= t0) {
            return Err(SolverError::Options(format!("t_end {t_end} < t0 {t0}")));
        }
        if t_end == t0 {
            return Ok(x0);
        }
        let rtol = self.opts.rtol;
        let span = t_end - t0;
        let h_max = self.opts.h_max.min(span);
        let mut t = t0;
        let mut y = x0;
        let mut f0 = self.rhs(sys, t, &y)?;
        let mut h = self
            .opts
            .h_initial
            .unwrap_or_else(|| initial_step(&y, &f0, &self.atol, rtol))
            .min(h_max);
        let mut jac = self.jacobian(sys, t, &y, &f0)?;
        let mut jac_fresh = true;
        let mut last: Option<DenseStep<N>> = None;
        let mut first = true;
        let mut rejected_last = false;
        let fnewt = (10.0 * f64::EPSILON / rtol).max(0.03f64.min(rtol.sqrt()));
        let c = self.tableau.c;
        let (gamma, alpha, beta) = (self.tableau.gamma, self.tableau.alpha, self.tableau.beta);

        loop {
            if self.stats.accepted + self.stats.rejected >= self.opts.max_steps {
                return Err(SolverError::TooManySteps { t, max_steps: self.opts.max_steps });
            }
            let mut last_step = false;
            if t + h >= t_end || t + 1.01 * h >= t_end {
                h = t_end - t;
                last_step = true;
            }
            if h < self.opts.h_min.max(16.0 * f64::EPSILON * t.abs()) {
                return Err(SolverError::StepUnderflow { t, h });
            }

            let eye = SMatrix::<f64, N, N>::identity();
            let real_mat = eye * (gamma / h) - jac;
            let cjac = jac.map(Complex::from);
            let cmat = SMatrix::<Complex<f64>, N, N>::identity() * Complex::new(alpha / h, -beta / h) - cjac;
            let (Some(real_lu), Some(complex_lu)) = (SmallLu::new(real_mat), SmallLu::new(cmat)) else {
                return Err(SolverError::Singular { t });
            };

            let scale = SVector::<f64, N>::from_fn(|i, _| self.atol[i] + rtol * y[i].abs());

            // Starting values from the previous collocation polynomial.
            let mut z: [SVector<f64, N>; 3] = match (&last, first) {
                (Some(prev), false) => {
                    let mut z = [SVector::zeros(); 3];
                    for i in 0..3 {
                        z[i] = prev.extrapolate(t + c[i] * h) - y;
                    }
                    z
                }
                _ => [SVector::zeros(); 3],
            };
            let tinv = self.tableau.t_inv;
            let tm = self.tableau.t;
            let mut w = [SVector::<f64, N>::zeros(); 3];
            for i in 0..3 {
                w[i] = z[0] * tinv[(i, 0)] + z[1] * tinv[(i, 1)] + z[2] * tinv[(i, 2)];
            }

            let mut converged = false;
            let mut newt = 0;
            let mut dnorm_old = 0.0;
            let mut theta_q_old = 1.0;
            self.fac_conv = self.fac_conv.max(f64::EPSILON).powf(0.8);
            while newt < MAX_NEWTON {
                let mut f = [SVector::<f64, N>::zeros(); 3];
                let mut bad = false;
                for i in 0..3 {
                    match self.rhs(sys, t + c[i] * h, &(y + z[i])) {
                        Ok(v) => f[i] = v,
                        Err(_) => {
                            bad = true;
                            break;
                        }
                    }
                }
                if bad {
                    break;
                }
                // Residual of h^{-1} (Lambda x I) W = (T^{-1} x I) F(Z), where
                // Lambda = [[gamma, 0, 0], [0, alpha, beta], [0, -beta, alpha]].
                let mut r = [SVector::<f64, N>::zeros(); 3];
                for i in 0..3 {
                    r[i] = f[0] * tinv[(i, 0)] + f[1] * tinv[(i, 1)] + f[2] * tinv[(i, 2)];
                }
                let r0 = r[0] - w[0] * (gamma / h);
                let r1 = r[1] - (w[1] * alpha + w[2] * beta) / h;
                let r2 = r[2] - (w[2] * alpha - w[1] * beta) / h;
                let dw0 = real_lu.solve(&r0);
                let rhs_c = SVector::<Complex<f64>, N>::from_fn(|k, _| Complex::new(r1[k], r2[k]));
                let dwc = complex_lu.solve(&rhs_c);
                let dw1 = dwc.map(|v| v.re);
                let dw2 = dwc.map(|v| v.im);
                let dnorm = ((scaled_norm(&dw0, &scale).powi(2)
                    + scaled_norm(&dw1, &scale).powi(2)
                    + scaled_norm(&dw2, &scale).powi(2))
                    / 3.0)
                    .sqrt();
                if newt > 0 {
                    let theta_q = dnorm / dnorm_old;
                    let theta = if newt == 1 { theta_q } else { (theta_q * theta_q_old).sqrt() };
                    theta_q_old = theta_q;
                    if theta >= 0.99 {
                        break;
                    }
                    self.fac_conv = theta / (1.0 - theta);
                    let remaining = (MAX_NEWTON - 1 - newt) as i32;
                    if self.fac_conv * dnorm * theta.powi(remaining) / fnewt >= 1.0 {
                        break;
                    }
                }
                dnorm_old = dnorm.max(f64::EPSILON);
                w[0] += dw0;
                w[1] += dw1;
                w[2] += dw2;
                for i in 0..3 {
                    z[i] = w[0] * tm[(i, 0)] + w[1] * tm[(i, 1)] + w[2] * tm[(i, 2)];
                }
                newt += 1;
                if self.fac_conv * dnorm <= fnewt {
                    converged = true;
                    break;
                }
            }

            if !converged {
                self.stats.newton_failures += 1;
                self.stats.rejected += 1;
                self.fac_conv = 1.0;
                h *= 0.5;
                rejected_last = true;
                if !jac_fresh {
                    jac = self.jacobian(sys, t, &y, &f0)?;
                    jac_fresh = true;
                }
                continue;
            }

            // Error estimate, filtered through (I - h gamma0 J)^{-1}.
            let ez = &self.tableau.err_z;
            let sum_z = z[0] * ez[0] + z[1] * ez[1] + z[2] * ez[2];
            let raw = f0 * (self.tableau.err_f0 * h) + sum_z;
            let mut err = real_lu.solve(&raw) * (gamma / h);
            let y_new = y + z[2];
            let scale_err = SVector::<f64, N>::from_fn(|i, _| {
                self.atol[i] + rtol * y[i].abs().max(y_new[i].abs())
            });
            let mut err_norm = scaled_norm(&err, &scale_err).max(1e-10);
            if err_norm >= 1.0 && (first || rejected_last) {
                let f_pert = self.rhs(sys, t, &(y + err));
                if let Ok(fp) = f_pert {
                    let raw2 = fp * (self.tableau.err_f0 * h) + sum_z;
                    err = real_lu.solve(&raw2) * (gamma / h);
                    err_norm = scaled_norm(&err, &scale_err).max(1e-10);
                }
            }

            let safety = 0.9 * (2 * MAX_NEWTON + 1) as f64 / (2 * MAX_NEWTON + newt) as f64;
            let factor = (safety * err_norm.powf(-0.25)).clamp(0.2, 8.0);

            if err_norm < 1.0 {
                if !y_new.iter().all(|v| v.is_finite()) {
                    return Err(SolverError::NonFinite { t: t + h });
                }
                let dense = DenseStep::new(t, h, y, &z, &c);
                on_step(&dense);
                self.stats.accepted += 1;
                self.stats.h_last = h;
                t = if last_step { t_end } else { t + h };
                y = y_new;
                if last_step {
                    return Ok(y);
                }
                f0 = self.rhs(sys, t, &y)?;
                jac = self.jacobian(sys, t, &y, &f0)?;
                jac_fresh = true;
                last = Some(dense);
                first = false;
                let grow = if rejected_last { factor.min(1.0) } else { factor };
                rejected_last = false;
                h = (h * grow).min(h_max);
            } else {
                self.stats.rejected += 1;
                rejected_last = true;
                h *= factor.min(0.9);
            }
        }
    }

    fn jacobian<S: OdeSystem<N>>(
        &mut self,
        sys: &S,
        t: f64,
        y: &SVector<f64, N>,
        f0: &SVector<f64, N>,
    ) -> Result<SMatrix<f64, N, N>, SolverError> {
        self.stats.jacobian_evals += 1;
        let jac = sys.jacobian(t, y, f0).map_err(|message| SolverError::Rhs { t, message })?;
        if jac.iter().all(|v| v.is_finite()) {
            Ok(jac)
        } else {
            Err(SolverError::NonFinite { t })
        }
    }
}

fn initial_step<const N: usize>(
    y: &SVector<f64, N>,
    f: &SVector<f64, N>,
    atol: &SVector<f64, N>,
    rtol: f64,
) -> f64 {
    let scale = SVector::<f64, N>::from_fn(|i, _| atol[i] + rtol * y[i].abs());
    let d0 = scaled_norm(y, &scale);
    let d1 = scaled_norm(f, &scale);
    let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h.clamp(1e-10, 1.0)
}

/// Classical fourth-order Runge-Kutta with a fixed step. `on_step` receives
/// (t, x) after every step, starting with the initial point.
pub fn rk4_fixed<const N: usize, S, F>(
    sys: &S,
    t0: f64,
    t_end: f64,
    x0: SVector<f64, N>,
    h: f64,
    mut on_step: F,
) -> Result<SVector<f64, N>, SolverError>
where
    S: OdeSystem<N>,
    F: FnMut(f64, &SVector<f64, N>),
{
    if !(h > 0.0) || !(t_end >= t0) {
        return Err(SolverError::Options(format!("h = {h}, span = [{t0}, {t_end}]")));
    }
    let steps = ((t_end - t0) / h).ceil() as usize;
    let h = if steps == 0 { 0.0 } else { (t_end - t0) / steps as f64 };
    let call = |t: f64, x: &SVector<f64, N>| {
        sys.rhs(t, x).map_err(|message| SolverError::Rhs { t, message })
    };
    let mut x = x0;
    on_step(t0, &x);
    for i in 0..steps {
        let t = t0 + i as f64 * h;
        let k1 = call(t, &x)?;
        let k2 = call(t + 0.5 * h, &(x + k1 * (0.5 * h)))?;
        let k3 = call(t + 0.5 * h, &(x + k2 * (0.5 * h)))?;
        let k4 = call(t + h, &(x + k3 * h))?;
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(SolverError::NonFinite { t: t + h });
        }
        on_step(t0 + (i + 1) as f64 * h, &x);
    }
    Ok(x)
}
