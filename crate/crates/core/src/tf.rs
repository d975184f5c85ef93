//! Parametric frequency-domain fitting of rational transfer functions and
//! zero-pole-gain conversion.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io;
use crate::spectral::FrfEstimate;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TfError {
    #[error("need at least {needed} bins, got {got}")]
    TooFewBins { needed: usize, got: usize },
    #[error("input lengths differ: {0}")]
    Mismatch(String),
    #[error("non-finite basis value or data")]
    NonFinite,
    #[error("design matrix is rank deficient (rank {rank} of {cols}, condition {condition:e})")]
    RankDeficient { rank: usize, cols: usize, condition: f64 },
    #[error("empty design")]
    Empty,
    #[error("weights must be nonnegative with a positive sum")]
    BadWeights,
    #[error("unstable poles {0:?}")]
    Unstable(Vec<Complex64>),
    #[error("pole on the imaginary axis cannot be reflected: {0}")]
    MarginalPole(Complex64),
    #[error("numerator is identically zero")]
    ZeroNumerator,
    #[error("operation needs a continuous-time model")]
    NotContinuous,
    #[error("model file: {0}")]
    File(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Domain {
    /// Polynomials in s, highest power first.
    Continuous,
    /// Polynomials in z^-1, constant term first.
    Discrete { sample_rate: f64 },
}

/// B/A with `a[0] = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct RationalTf {
    pub b: Vec<f64>,
    pub a: Vec<f64>,
    pub domain: Domain,
}

fn polyval(c: &[f64], x: Complex64) -> Complex64 {
    c.iter().fold(Complex64::new(0.0, 0.0), |acc, &v| acc * x + v)
}

impl RationalTf {
    pub fn continuous(b: Vec<f64>, a: Vec<f64>) -> Self {
        Self { b, a, domain: Domain::Continuous }
    }

    pub fn na(&self) -> usize {
        self.a.len() - 1
    }

    pub fn nb(&self) -> usize {
        self.b.len() - 1
    }

    /// Response at frequency `f` (Hz).
    pub fn eval_hz(&self, f: f64) -> Complex64 {
        let w = std::f64::consts::TAU * f;
        match self.domain {
            Domain::Continuous => self.eval_s(Complex64::new(0.0, w)),
            Domain::Discrete { sample_rate } => {
                let q = Complex64::from_polar(1.0, -w / sample_rate);
                // Sum c_i q^i, constant first.
                let horner = |c: &[f64]| {
                    c.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &v| acc * q + v)
                };
                horner(&self.b) / horner(&self.a)
            }
        }
    }

    /// B(s) / A(s) for a continuous model.
    pub fn eval_s(&self, s: Complex64) -> Complex64 {
        polyval(&self.b, s) / polyval(&self.a, s)
    }

    pub fn validate(&self) -> Result<(), TfError> {
        if self.a.is_empty() || self.b.is_empty() {
            return Err(TfError::Empty);
        }
        if self.a[0] != 1.0 {
            return Err(TfError::Mismatch(format!("a[0] = {} (must be 1)", self.a[0])));
        }
        if self.a.iter().chain(&self.b).any(|v| !v.is_finite()) {
            return Err(TfError::NonFinite);
        }
        Ok(())
    }

    /// Bode table on the given frequencies: (f, |G| dB, phase deg), with the
    /// phase unwrapped along the grid.
    pub fn bode(&self, freqs: &[f64]) -> Vec<[f64; 3]> {
        let mut out = Vec::with_capacity(freqs.len());
        let mut prev: Option<f64> = None;
        for &f in freqs {
            let g = self.eval_hz(f);
            let mut ph = g.arg().to_degrees();
            if let Some(p) = prev {
                while ph - p > 180.0 {
                    ph -= 360.0;
                }
                while ph - p < -180.0 {
                    ph += 360.0;
                }
            }
            prev = Some(ph);
            out.push([f, 20.0 * g.norm().log10(), ph]);
        }
        out
    }

    pub fn write_bode_csv(&self, path: &Path, freqs: &[f64]) -> std::io::Result<()> {
        io::write_csv(path, &["f_hz", "mag_db", "phase_deg"], self.bode(freqs))
    }
}

/// Regression variable per bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Basis {
    /// s_k (continuous); columns use descending powers.
    Continuous,
    /// z_k^-1 (discrete); columns use ascending powers.
    Discrete,
}

/// Real-valued stacked regression [Re; Im] of Y A(q) = U B(q) with a0 = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Regression {
    pub design: DMatrix<f64>,
    pub target: DVector<f64>,
    /// Euclidean norm of every design column, for conditioning.
    pub column_scale: Vec<f64>,
    pub na: usize,
    pub nb: usize,
    pub bins: usize,
}

/// Assembles the regression from input/output spectra and basis values.
/// Unknowns are ordered (a_1..a_na, b_0..b_nb).
pub fn build_regression(
    u: &[Complex64],
    y: &[Complex64],
    q: &[Complex64],
    na: usize,
    nb: usize,
    basis: Basis,
) -> Result<Regression, TfError> {
    let bins = u.len();
    if y.len() != bins || q.len() != bins {
        return Err(TfError::Mismatch(format!("{} inputs, {} outputs, {} basis values", bins, y.len(), q.len())));
    }
    let cols = na + nb + 1;
    if bins < cols {
        return Err(TfError::TooFewBins { needed: cols, got: bins });
    }
    if u.iter().chain(y).chain(q).any(|v| !(v.re.is_finite() && v.im.is_finite())) {
        return Err(TfError::NonFinite);
    }
    let power = |x: Complex64, n: usize| x.powu(n as u32);
    let mut design = DMatrix::<f64>::zeros(2 * bins, cols);
    let mut target = DVector::<f64>::zeros(2 * bins);
    for k in 0..bins {
        let mut row = Vec::with_capacity(cols);
        for i in 1..=na {
            let p = match basis {
                Basis::Continuous => na - i,
                Basis::Discrete => i,
            };
            row.push(-y[k] * power(q[k], p));
        }
        for i in 0..=nb {
            let p = match basis {
                Basis::Continuous => nb - i,
                Basis::Discrete => i,
            };
            row.push(u[k] * power(q[k], p));
        }
        let t = match basis {
            Basis::Continuous => y[k] * power(q[k], na),
            Basis::Discrete => y[k],
        };
        for (j, v) in row.iter().enumerate() {
            design[(k, j)] = v.re;
            design[(bins + k, j)] = v.im;
        }
        target[k] = t.re;
        target[bins + k] = t.im;
    }
    let column_scale = (0..cols).map(|j| design.column(j).norm()).collect();
    Ok(Regression { design, target, column_scale, na, nb, bins })
}

/// Least-squares solution with diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct LsSolution {
    pub theta: DVector<f64>,
    pub rank: usize,
    /// Ratio of extreme singular values of the column-equilibrated design.
    pub condition: f64,
    pub residual_norm: f64,
}

/// Relative singular-value cutoff for the numerical rank.
pub const RANK_TOL: f64 = 1e-11;

/// Minimum-norm least squares by SVD of the column-equilibrated design.
pub fn lstsq(design: &DMatrix<f64>, target: &DVector<f64>) -> Result<LsSolution, TfError> {
    let (rows, cols) = design.shape();
    if cols == 0 || rows == 0 {
        return Err(TfError::Empty);
    }
    if rows < cols {
        return Err(TfError::TooFewBins { needed: cols, got: rows });
    }
    if target.len() != rows {
        return Err(TfError::Mismatch("target length".into()));
    }
    let scale: Vec<f64> = (0..cols)
        .map(|j| {
            let n = design.column(j).norm();
            if n > 0.0 {
                n
            } else {
                1.0
            }
        })
        .collect();
    let mut scaled = design.clone();
    for j in 0..cols {
        scaled.column_mut(j).scale_mut(1.0 / scale[j]);
    }
    let svd = scaled.svd(true, true);
    let sv = &svd.singular_values;
    let smax = sv.max();
    let smin = sv.min();
    let cutoff = RANK_TOL * smax;
    let rank = sv.iter().filter(|&&s| s > cutoff).count();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let mut z = DVector::<f64>::zeros(cols);
    for i in 0..sv.len() {
        if sv[i] > cutoff {
            z += v_t.row(i).transpose() * (u.column(i).dot(target) / sv[i]);
        }
    }
    let theta = DVector::from_fn(cols, |j, _| z[j] / scale[j]);
    let residual_norm = (design * &theta - target).norm();
    Ok(LsSolution { theta, rank, condition, residual_norm })
}

/// Least-squares parameters; rank deficiency is an error.
pub fn solve_ls(design: &DMatrix<f64>, target: &DVector<f64>) -> Result<DVector<f64>, TfError> {
    let sol = lstsq(design, target)?;
    if sol.rank < design.ncols() {
        return Err(TfError::RankDeficient {
            rank: sol.rank,
            cols: design.ncols(),
            condition: sol.condition,
        });
    }
    Ok(sol.theta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightRule {
    Uniform,
    /// w_k = 1 / (number of bins in the log-decade containing f_k).
    InverseBinDensity,
    Custom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightProfile {
    pub weights: Vec<f64>,
    pub rule: WeightRule,
}

impl WeightProfile {
    pub fn uniform(n: usize) -> Self {
        Self { weights: vec![1.0; n], rule: WeightRule::Uniform }
    }

    pub fn inverse_bin_density(freqs: &[f64]) -> Self {
        let decade = |f: f64| f.log10().floor() as i64;
        let mut counts = std::collections::HashMap::new();
        for &f in freqs {
            *counts.entry(decade(f)).or_insert(0usize) += 1;
        }
        let weights = freqs.iter().map(|&f| 1.0 / counts[&decade(f)] as f64).collect();
        Self { weights, rule: WeightRule::InverseBinDensity }
    }

    pub fn custom(weights: Vec<f64>) -> Result<Self, TfError> {
        let p = Self { weights, rule: WeightRule::Custom };
        p.validate()?;
        Ok(p)
    }

    pub fn for_rule(rule: WeightRule, freqs: &[f64]) -> Result<Self, TfError> {
        match rule {
            WeightRule::Uniform => Ok(Self::uniform(freqs.len())),
            WeightRule::InverseBinDensity => Ok(Self::inverse_bin_density(freqs)),
            WeightRule::Custom => Err(TfError::BadWeights),
        }
    }

    pub fn validate(&self) -> Result<(), TfError> {
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0))
            || !(self.weights.iter().sum::<f64>() > 0.0)
        {
            return Err(TfError::BadWeights);
        }
        Ok(())
    }
}

fn row_weighted(
    design: &DMatrix<f64>,
    target: &DVector<f64>,
    weights: &WeightProfile,
) -> Result<(DMatrix<f64>, DVector<f64>), TfError> {
    weights.validate()?;
    let rows = design.nrows();
    let bins = weights.weights.len();
    if rows != 2 * bins {
        return Err(TfError::Mismatch(format!("{} weights for {} stacked rows", bins, rows)));
    }
    let mut d = design.clone();
    let mut t = target.clone();
    for k in 0..bins {
        let s = weights.weights[k].sqrt();
        for r in [k, bins + k] {
            d.row_mut(r).scale_mut(s);
            t[r] *= s;
        }
    }
    Ok((d, t))
}

/// Weighted least squares; the real and imaginary rows of bin k share w_k.
pub fn solve_wls(
    design: &DMatrix<f64>,
    target: &DVector<f64>,
    weights: &WeightProfile,
) -> Result<DVector<f64>, TfError> {
    let (d, t) = row_weighted(design, target, weights)?;
    solve_ls(&d, &t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// sqrt(sum_k w_k |G_fit(k) - G(k)|^2 / sum_k w_k).
    pub weighted_rms_error: f64,
    /// Norm of the weighted equation residual.
    pub equation_residual: f64,
    pub condition: f64,
    pub rank: usize,
    pub rank_deficient: bool,
    /// Frequency normalization (rad/s).
    pub omega_scale: f64,
    pub bins: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalFit {
    pub tf: RationalTf,
    pub diagnostics: FitDiagnostics,
}

/// Continuous-time fit of B(s)/A(s) to the excited bins of an FRF.
pub fn fit_local_model(
    frf: &FrfEstimate,
    na: usize,
    nb: usize,
    weights: &WeightRule,
) -> Result<LocalFit, TfError> {
    let points = frf.excited_points();
    let freqs: Vec<f64> = points.iter().map(|p| p.freq).collect();
    let g: Vec<Complex64> = points.iter().map(|p| p.g).collect();
    let w = WeightProfile::for_rule(*weights, &freqs)?;
    fit_continuous(&freqs, &g, na, nb, &w)
}

/// Fewest excited bins accepted by the local fits.
pub const MIN_FIT_BINS: usize = 5;

/// Continuous-time fit of B(s)/A(s) to samples G(j 2 pi f_k).
pub fn fit_continuous(
    freqs: &[f64],
    g: &[Complex64],
    na: usize,
    nb: usize,
    weights: &WeightProfile,
) -> Result<LocalFit, TfError> {
    let bins = freqs.len();
    let needed = (na + nb + 1).max(MIN_FIT_BINS);
    if bins < needed {
        return Err(TfError::TooFewBins { needed, got: bins });
    }
    if g.len() != bins || weights.weights.len() != bins {
        return Err(TfError::Mismatch("frequency, response and weight counts differ".into()));
    }
    let omegas: Vec<f64> = freqs.iter().map(|f| std::f64::consts::TAU * f).collect();
    if omegas.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
        return Err(TfError::NonFinite);
    }
    let omega_scale = (omegas.iter().map(|w| w.ln()).sum::<f64>() / bins as f64).exp();
    let q: Vec<Complex64> = omegas.iter().map(|w| Complex64::new(0.0, w / omega_scale)).collect();
    let u = vec![Complex64::new(1.0, 0.0); bins];
    let reg = build_regression(&u, g, &q, na, nb, Basis::Continuous)?;
    let (d, t) = row_weighted(&reg.design, &reg.target, weights)?;
    let sol = lstsq(&d, &t)?;
    // Undo s -> s / omega_scale.
    let mut a = vec![1.0];
    for i in 1..=na {
        a.push(sol.theta[i - 1] * omega_scale.powi(i as i32));
    }
    let shift = na as i32 - nb as i32;
    let b: Vec<f64> = (0..=nb)
        .map(|i| sol.theta[na + i] * omega_scale.powi(shift + i as i32))
        .collect();
    let tf = RationalTf::continuous(b, a);
    let wsum: f64 = weights.weights.iter().sum();
    let err2: f64 = (0..bins)
        .map(|k| weights.weights[k] * (tf.eval_hz(freqs[k]) - g[k]).norm_sqr())
        .sum();
    let cols = na + nb + 1;
    Ok(LocalFit {
        tf,
        diagnostics: FitDiagnostics {
            weighted_rms_error: (err2 / wsum).sqrt(),
            equation_residual: sol.residual_norm,
            condition: sol.condition,
            rank: sol.rank,
            rank_deficient: sol.rank < cols,
            omega_scale,
            bins,
        },
    })
}

/// RMS of the dB magnitude error of `tf` against the excited FRF bins in
/// [f_lo, f_hi].
pub fn magnitude_error_db(tf: &RationalTf, frf: &FrfEstimate, f_lo: f64, f_hi: f64) -> f64 {
    let errs: Vec<f64> = frf
        .excited_points()
        .into_iter()
        .filter(|p| p.freq >= f_lo * (1.0 - 1e-12) && p.freq <= f_hi * (1.0 + 1e-12))
        .map(|p| 20.0 * (tf.eval_hz(p.freq).norm() / p.g.norm()).log10())
        .collect();
    (errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt()
}

/// G(s) = K prod(s - z_i) / prod(s - p_i).
#[derive(Debug, Clone, PartialEq)]
pub struct ZpkModel {
    pub gain: f64,
    pub zeros: Vec<Complex64>,
    pub poles: Vec<Complex64>,
    pub u_dc: Option<f64>,
    pub notes: Vec<String>,
}

impl ZpkModel {
    pub fn eval_s(&self, s: Complex64) -> Complex64 {
        let num: Complex64 = self.zeros.iter().map(|z| s - z).product();
        let den: Complex64 = self.poles.iter().map(|p| s - p).product();
        self.gain * num / den
    }

    pub fn eval_hz(&self, f: f64) -> Complex64 {
        self.eval_s(Complex64::new(0.0, std::f64::consts::TAU * f))
    }

    pub fn is_stable(&self) -> bool {
        self.poles.iter().all(|p| p.re < 0.0)
    }
}

/// Roots of a real polynomial (highest power first, leading coefficient
/// nonzero). Degree 1 and 2 in closed form, higher degrees from the
/// companion matrix. Complex roots come in exact conjugate pairs.
pub fn poly_roots(c: &[f64]) -> Vec<Complex64> {
    let n = c.len().saturating_sub(1);
    match n {
        0 => Vec::new(),
        1 => vec![Complex64::new(-c[1] / c[0], 0.0)],
        2 => quadratic_roots(c[0], c[1], c[2]),
        _ => {
            let mut m = DMatrix::<f64>::zeros(n, n);
            for j in 0..n {
                m[(0, j)] = -c[j + 1] / c[0];
            }
            for i in 1..n {
                m[(i, i - 1)] = 1.0;
            }
            let eig = m.complex_eigenvalues();
            conjugate_close(eig.iter().copied().collect())
        }
    }
}

fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<Complex64> {
    let disc = b * b - 4.0 * a * c;
    if disc >= 0.0 {
        let q = -0.5 * (b + b.signum() * disc.sqrt());
        if q == 0.0 {
            return vec![Complex64::new(0.0, 0.0); 2];
        }
        let mut r = [q / a, c / q];
        r.sort_by(|x, y| x.partial_cmp(y).unwrap());
        vec![Complex64::new(r[0], 0.0), Complex64::new(r[1], 0.0)]
    } else {
        let re = -b / (2.0 * a);
        let im = (-disc).sqrt() / (2.0 * a.abs());
        vec![Complex64::new(re, im), Complex64::new(re, -im)]
    }
}

/// Makes nearly conjugate root pairs exactly conjugate and snaps tiny
/// imaginary parts of lone roots to zero.
fn conjugate_close(mut roots: Vec<Complex64>) -> Vec<Complex64> {
    let n = roots.len();
    let mut used = vec![false; n];
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        if used[i] {
            continue;
        }
        used[i] = true;
        let r = roots[i];
        let tol = 1e-9 * r.norm().max(1e-300);
        if r.im.abs() <= tol {
            out.push(Complex64::new(r.re, 0.0));
            continue;
        }
        let partner = (0..n)
            .filter(|&j| !used[j])
            .min_by(|&a, &b| {
                (roots[a] - r.conj()).norm().partial_cmp(&(roots[b] - r.conj()).norm()).unwrap()
            });
        if let Some(j) = partner {
            used[j] = true;
            let re = 0.5 * (r.re + roots[j].re);
            let im = 0.5 * (r.im.abs() + roots[j].im.abs());
            out.push(Complex64::new(re, im));
            out.push(Complex64::new(re, -im));
        } else {
            out.push(r);
        }
    }
    roots.clear();
    out
}

/// Zero-pole-gain form of a continuous model. Leading zero numerator
/// coefficients reduce the zero count and are noted.
pub fn tf_to_zpk(tf: &RationalTf) -> Result<ZpkModel, TfError> {
    if tf.domain != Domain::Continuous {
        return Err(TfError::NotContinuous);
    }
    tf.validate()?;
    let lead = tf.b.iter().position(|&v| v != 0.0).ok_or(TfError::ZeroNumerator)?;
    let mut notes = Vec::new();
    if lead > 0 {
        notes.push(format!(
            "numerator degree drops from {} to {}",
            tf.nb(),
            tf.nb() - lead
        ));
    }
    let b = &tf.b[lead..];
    Ok(ZpkModel {
        gain: b[0] / tf.a[0],
        zeros: poly_roots(b),
        poles: poly_roots(&tf.a),
        u_dc: None,
        notes,
    })
}

/// Expands prod(s - r) into real coefficients, highest power first.
pub fn poly_from_roots(roots: &[Complex64]) -> Vec<f64> {
    let mut c = vec![Complex64::new(1.0, 0.0)];
    for r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); c.len() + 1];
        for (i, v) in c.iter().enumerate() {
            next[i] += v;
            next[i + 1] -= v * r;
        }
        c = next;
    }
    c.into_iter().map(|v| v.re).collect()
}

pub fn zpk_to_tf(zpk: &ZpkModel) -> RationalTf {
    let b = poly_from_roots(&zpk.zeros).into_iter().map(|v| v * zpk.gain).collect();
    RationalTf::continuous(b, poly_from_roots(&zpk.poles))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StabilityPolicy {
    Reject,
    Reflect,
}

/// Checks Re(p) < 0 for every pole. `Reflect` mirrors offending poles to
/// -|Re p|, which keeps every |p| and therefore |G(0)|.
pub fn enforce_stability(model: &ZpkModel, policy: StabilityPolicy) -> Result<ZpkModel, TfError> {
    let unstable: Vec<Complex64> = model.poles.iter().copied().filter(|p| p.re >= 0.0).collect();
    if unstable.is_empty() {
        return Ok(model.clone());
    }
    match policy {
        StabilityPolicy::Reject => Err(TfError::Unstable(unstable)),
        StabilityPolicy::Reflect => {
            if let Some(p) = unstable.iter().find(|p| p.re == 0.0) {
                return Err(TfError::MarginalPole(*p));
            }
            let mut out = model.clone();
            for p in &mut out.poles {
                if p.re > 0.0 {
                    out.notes.push(format!("reflected pole {p} to {}", Complex64::new(-p.re, p.im)));
                    p.re = -p.re;
                }
            }
            Ok(out)
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    domain: Domain,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    u_dc: Option<f64>,
    b: Vec<f64>,
    a: Vec<f64>,
    #[serde(rename = "K")]
    gain: f64,
    #[serde(rename = "Z")]
    zeros: Vec<[f64; 2]>,
    #[serde(rename = "P")]
    poles: Vec<[f64; 2]>,
    #[serde(default)]
    notes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    diagnostics: Option<FitDiagnostics>,
}

/// A fitted local model with its zpk form, as persisted.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRecord {
    pub tf: RationalTf,
    pub zpk: ZpkModel,
    pub diagnostics: Option<FitDiagnostics>,
}

impl ModelRecord {
    pub fn to_model_string(&self) -> String {
        let cx = |v: &[Complex64]| v.iter().map(|z| [z.re, z.im]).collect();
        let file = ModelFile {
            domain: self.tf.domain,
            u_dc: self.zpk.u_dc,
            b: self.tf.b.clone(),
            a: self.tf.a.clone(),
            gain: self.zpk.gain,
            zeros: cx(&self.zpk.zeros),
            poles: cx(&self.zpk.poles),
            notes: self.zpk.notes.clone(),
            diagnostics: self.diagnostics.clone(),
        };
        toml::to_string(&file).expect("model serialises")
    }

    pub fn from_model_str(text: &str) -> Result<Self, TfError> {
        let f: ModelFile = toml::from_str(text).map_err(|e| TfError::File(e.to_string()))?;
        let cx = |v: &[[f64; 2]]| v.iter().map(|p| Complex64::new(p[0], p[1])).collect();
        let tf = RationalTf { b: f.b, a: f.a, domain: f.domain };
        tf.validate()?;
        Ok(Self {
            tf,
            zpk: ZpkModel {
                gain: f.gain,
                zeros: cx(&f.zeros),
                poles: cx(&f.poles),
                u_dc: f.u_dc,
                notes: f.notes,
            },
            diagnostics: f.diagnostics,
        })
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_model_string())
    }

    pub fn load(path: &Path) -> Result<Self, TfError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TfError::File(format!("{}: {e}", path.display())))?;
        Self::from_model_str(&text)
    }
}
