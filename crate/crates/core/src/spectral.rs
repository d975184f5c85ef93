//! Nonparametric frequency-domain analysis of periodic experiments:
//! per-period DFTs, sample statistics, per-realization FRFs and the Best
//! Linear Approximation with its noise and total-distortion variances.

use std::path::Path;

use num_complex::Complex64;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::bdm::SimulationTrace;
use crate::excitation::{samples_per_period, MultisineSpec};
use crate::io;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("DFT needs at least 2 samples, got {0}")]
    TooShort(usize),
    #[error("variance needs at least 2 periods, got {0}")]
    InsufficientPeriods(usize),
    #[error("distortion variance needs at least 2 realizations, got {0}")]
    InsufficientRealizations(usize),
    #[error("input spectrum is zero at excited bin {bin} ({freq} Hz)")]
    ZeroInput { bin: usize, freq: f64 },
    #[error("inconsistent spectra: {0}")]
    Mismatch(String),
    #[error(
        "response has not settled: transient metric {metric:.3e} exceeds {threshold:.1e}; \
         simulate more periods before the kept ones"
    )]
    NotSettled { metric: f64, threshold: f64 },
    #[error("record holds {available} full periods, need {needed}")]
    ShortRecord { available: usize, needed: usize },
    #[error("incoherent record: {0}")]
    Incoherent(String),
    #[error("FRF file: {0}")]
    File(String),
}

/// X(k) = (1/N) sum_n x(n) e^{-j 2 pi k n / N} for k = 0..=N/2.
pub fn dft(samples: &[f64]) -> Result<Vec<Complex64>, SpectralError> {
    let n = samples.len();
    if n < 2 {
        return Err(SpectralError::TooShort(n));
    }
    let mut buf: Vec<Complex64> = samples.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    buf.truncate(n / 2 + 1);
    for v in &mut buf {
        *v *= scale;
    }
    Ok(buf)
}

/// Per-period spectra of input and output for one realization.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodSpectra {
    /// `u[l][k]`: period l, bin k.
    pub u: Vec<Vec<Complex64>>,
    pub y: Vec<Vec<Complex64>>,
    /// Frequency resolution (Hz).
    pub f0: f64,
    pub excited: Vec<bool>,
    pub samples_per_period: usize,
    /// Relative RMS difference between the first and last kept output
    /// periods.
    pub transient_metric: f64,
}

impl PeriodSpectra {
    /// Transforms consecutive periods of `u` and `y`.
    pub fn from_periods(
        u_periods: &[&[f64]],
        y_periods: &[&[f64]],
        f0: f64,
        excited_harmonics: &[u64],
    ) -> Result<Self, SpectralError> {
        if u_periods.is_empty() || u_periods.len() != y_periods.len() {
            return Err(SpectralError::Mismatch("period counts of u and y differ".into()));
        }
        let n = u_periods[0].len();
        if u_periods.iter().chain(y_periods).any(|p| p.len() != n) {
            return Err(SpectralError::Mismatch("periods differ in length".into()));
        }
        let bins = n / 2 + 1;
        let mut excited = vec![false; bins];
        for &k in excited_harmonics {
            if (k as usize) < bins {
                excited[k as usize] = true;
            }
        }
        let u = u_periods.iter().map(|p| dft(p)).collect::<Result<Vec<_>, _>>()?;
        let y = y_periods.iter().map(|p| dft(p)).collect::<Result<Vec<_>, _>>()?;
        let first = y_periods[0];
        let last = y_periods[y_periods.len() - 1];
        Ok(Self {
            u,
            y,
            f0,
            excited,
            samples_per_period: n,
            transient_metric: relative_rms_difference(first, last),
        })
    }

    pub fn periods(&self) -> usize {
        self.u.len()
    }

    pub fn bins(&self) -> usize {
        self.excited.len()
    }
}

/// RMS of (a - b) over RMS of b.
pub fn relative_rms_difference(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let norm: f64 = b.iter().map(|y| y * y).sum();
    if norm == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (diff / norm).sqrt()
    }
}

/// Sample mean and per-bin variance of a set of periods.
#[derive(Debug, Clone, PartialEq)]
pub struct BinStatistics {
    pub mean: Vec<Complex64>,
    /// (1/(P-1)) sum_l |X_l(k) - mean(k)|^2
    pub variance: Vec<f64>,
}

pub fn period_mean(periods: &[Vec<Complex64>]) -> Vec<Complex64> {
    let bins = periods.first().map_or(0, Vec::len);
    (0..bins).map(|k| mean_of(periods.iter().map(|x| x[k]))).collect()
}

/// Mean as first + mean of offsets, so identical values reproduce exactly.
fn mean_of(values: impl Iterator<Item = Complex64> + Clone) -> Complex64 {
    let mut it = values.clone();
    let Some(first) = it.next() else {
        return Complex64::new(0.0, 0.0);
    };
    let n = values.count() as f64;
    first + it.map(|v| v - first).sum::<Complex64>() / n
}

fn bin_statistics(periods: &[Vec<Complex64>]) -> Result<BinStatistics, SpectralError> {
    let p = periods.len();
    if p < 2 {
        return Err(SpectralError::InsufficientPeriods(p));
    }
    let mean = period_mean(periods);
    let variance = mean
        .iter()
        .enumerate()
        .map(|(k, m)| periods.iter().map(|x| (x[k] - m).norm_sqr()).sum::<f64>() / (p - 1) as f64)
        .collect();
    Ok(BinStatistics { mean, variance })
}

/// Statistics of (U, Y) over the periods of one realization.
pub fn period_statistics(
    spectra: &PeriodSpectra,
) -> Result<(BinStatistics, BinStatistics), SpectralError> {
    Ok((bin_statistics(&spectra.u)?, bin_statistics(&spectra.y)?))
}

/// FRF of one realization.
#[derive(Debug, Clone, PartialEq)]
pub struct RealizationFrf {
    pub f0: f64,
    pub excited: Vec<bool>,
    /// Y/U on excited bins, zero elsewhere.
    pub g: Vec<Complex64>,
    /// |Y| on non-excited bins, zero on excited ones.
    pub residual: Vec<f64>,
    /// Noise variance of G on excited bins: sigma_Y^2 / (P |U|^2).
    pub sigma2_noise: Vec<f64>,
    pub periods: usize,
}

/// G(k) = Y(k) / U(k) on excited bins; non-excited bins carry |Y(k)|.
pub fn frf_realization(
    mean_u: &[Complex64],
    mean_y: &[Complex64],
    excited: &[bool],
    f0: f64,
) -> Result<RealizationFrf, SpectralError> {
    if mean_u.len() != mean_y.len() || mean_u.len() != excited.len() {
        return Err(SpectralError::Mismatch("bin counts differ".into()));
    }
    let bins = excited.len();
    let mut g = vec![Complex64::new(0.0, 0.0); bins];
    let mut residual = vec![0.0; bins];
    for k in 0..bins {
        if excited[k] {
            if mean_u[k].norm() == 0.0 {
                return Err(SpectralError::ZeroInput { bin: k, freq: k as f64 * f0 });
            }
            g[k] = mean_y[k] / mean_u[k];
        } else {
            residual[k] = mean_y[k].norm();
        }
    }
    Ok(RealizationFrf {
        f0,
        excited: excited.to_vec(),
        g,
        residual,
        sigma2_noise: vec![0.0; bins],
        periods: 1,
    })
}

/// Full single-realization analysis: period means, variances and FRF.
pub fn analyze_realization(spectra: &PeriodSpectra) -> Result<RealizationFrf, SpectralError> {
    let p = spectra.periods();
    let (mean_u, mean_y, var_y) = if p >= 2 {
        let (su, sy) = period_statistics(spectra)?;
        (su.mean, sy.mean, Some(sy.variance))
    } else {
        (period_mean(&spectra.u), period_mean(&spectra.y), None)
    };
    let mut frf = frf_realization(&mean_u, &mean_y, &spectra.excited, spectra.f0)?;
    frf.periods = p;
    if let Some(var_y) = var_y {
        for k in 0..frf.g.len() {
            if frf.excited[k] {
                frf.sigma2_noise[k] = var_y[k] / (p as f64 * mean_u[k].norm_sqr());
            }
        }
    }
    Ok(frf)
}

/// Averaged FRF with its variances.
#[derive(Debug, Clone, PartialEq)]
pub struct FrfEstimate {
    pub f0: f64,
    pub excited: Vec<bool>,
    pub g: Vec<Complex64>,
    /// Noise variance of the averaged FRF.
    pub sigma2_noise: Vec<f64>,
    /// Total (noise plus stochastic nonlinear) variance of the averaged
    /// FRF: sum_m |G_m - G_BLA|^2 / (M (M - 1)).
    pub sigma2_total: Vec<f64>,
    /// Mean output residual |Y| on non-excited bins.
    pub residual: Vec<f64>,
    pub realizations: usize,
    pub periods: usize,
}

/// Best Linear Approximation over M >= 2 realizations.
pub fn bla(realizations: &[RealizationFrf]) -> Result<FrfEstimate, SpectralError> {
    let m = realizations.len();
    if m < 2 {
        return Err(SpectralError::InsufficientRealizations(m));
    }
    average(realizations)
}

/// Mean FRF of one realization, variances zero-filled.
pub fn bla_single(realization: &RealizationFrf) -> FrfEstimate {
    average(std::slice::from_ref(realization)).expect("one realization is consistent")
}

fn average(realizations: &[RealizationFrf]) -> Result<FrfEstimate, SpectralError> {
    let first = &realizations[0];
    let bins = first.g.len();
    if realizations
        .iter()
        .any(|r| r.g.len() != bins || r.excited != first.excited || r.f0 != first.f0)
    {
        return Err(SpectralError::Mismatch("realizations differ in grid or excited set".into()));
    }
    let m = realizations.len() as f64;
    let mut g = vec![Complex64::new(0.0, 0.0); bins];
    let mut sigma2_total = vec![0.0; bins];
    let mut sigma2_noise = vec![0.0; bins];
    let mut residual = vec![0.0; bins];
    for k in 0..bins {
        g[k] = mean_of(realizations.iter().map(|r| r.g[k]));
        residual[k] = realizations.iter().map(|r| r.residual[k]).sum::<f64>() / m;
        sigma2_noise[k] = realizations.iter().map(|r| r.sigma2_noise[k]).sum::<f64>() / (m * m);
        if realizations.len() >= 2 {
            sigma2_total[k] = realizations
                .iter()
                .map(|r| (r.g[k] - g[k]).norm_sqr())
                .sum::<f64>()
                / (m * (m - 1.0));
        }
    }
    Ok(FrfEstimate {
        f0: first.f0,
        excited: first.excited.clone(),
        g,
        sigma2_noise,
        sigma2_total,
        residual,
        realizations: realizations.len(),
        periods: realizations.iter().map(|r| r.periods).min().unwrap_or(0),
    })
}

/// One excited bin of an [`FrfEstimate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrfPoint {
    pub bin: usize,
    pub freq: f64,
    pub g: Complex64,
    pub sigma2_noise: f64,
    pub sigma2_total: f64,
}

impl FrfEstimate {
    pub fn freq(&self, k: usize) -> f64 {
        k as f64 * self.f0
    }

    pub fn excited_points(&self) -> Vec<FrfPoint> {
        (0..self.g.len())
            .filter(|&k| self.excited[k])
            .map(|k| FrfPoint {
                bin: k,
                freq: self.freq(k),
                g: self.g[k],
                sigma2_noise: self.sigma2_noise[k],
                sigma2_total: self.sigma2_total[k],
            })
            .collect()
    }

    /// 20 log10|G| - 10 log10(M sigma2_total) on excited bins within
    /// [f_lo, f_hi]. Bins with zero variance give +infinity.
    pub fn separation_db(&self, f_lo: f64, f_hi: f64) -> Vec<f64> {
        let m = self.realizations as f64;
        self.excited_points()
            .into_iter()
            .filter(|p| p.freq >= f_lo * (1.0 - 1e-12) && p.freq <= f_hi * (1.0 + 1e-12))
            .map(|p| 20.0 * p.g.norm().log10() - 10.0 * (m * p.sigma2_total).log10())
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let rows = (0..self.g.len()).map(|k| {
            [
                self.freq(k),
                self.g[k].re,
                self.g[k].im,
                self.sigma2_noise[k],
                if self.excited[k] { self.sigma2_total[k] } else { self.residual[k] },
                if self.excited[k] { 1.0 } else { 0.0 },
            ]
        });
        io::write_csv(
            path,
            &["f_hz", "re_G", "im_G", "sigma2_noise", "sigma2_total", "excited"],
            rows,
        )
    }

    /// Reads an FRF file. Non-excited bins carry the output residual in the
    /// `sigma2_total` column.
    pub fn read_csv(path: &Path, realizations: usize, periods: usize) -> Result<Self, SpectralError> {
        let (header, rows) = io::read_csv(path).map_err(|e| SpectralError::File(e.to_string()))?;
        if header != ["f_hz", "re_G", "im_G", "sigma2_noise", "sigma2_total", "excited"] {
            return Err(SpectralError::File(format!("unexpected header {header:?}")));
        }
        if rows.len() < 2 || rows.iter().any(|r| r.len() != 6) {
            return Err(SpectralError::File("malformed rows".into()));
        }
        let f0 = rows[1][0];
        let mut est = FrfEstimate {
            f0,
            excited: Vec::with_capacity(rows.len()),
            g: Vec::with_capacity(rows.len()),
            sigma2_noise: Vec::with_capacity(rows.len()),
            sigma2_total: Vec::with_capacity(rows.len()),
            residual: Vec::with_capacity(rows.len()),
            realizations,
            periods,
        };
        for r in &rows {
            let excited = r[5] != 0.0;
            est.excited.push(excited);
            est.g.push(Complex64::new(r[1], r[2]));
            est.sigma2_noise.push(r[3]);
            est.sigma2_total.push(if excited { r[4] } else { 0.0 });
            est.residual.push(if excited { 0.0 } else { r[4] });
        }
        Ok(est)
    }
}

/// Default threshold on the transient metric.
pub const SETTLE_THRESHOLD: f64 = 1e-4;

/// Segments the last `keep` full periods of a simulated multisine record
/// (periods counted from the first sample) and transforms them.
pub fn steady_period_extractor(
    trace: &SimulationTrace,
    spec: &MultisineSpec,
    keep: usize,
    threshold: f64,
) -> Result<PeriodSpectra, SpectralError> {
    let n = samples_per_period(trace.sample_rate, spec.base_frequency)
        .map_err(|e| SpectralError::Incoherent(e.to_string()))?;
    let y = trace.chlf();
    extract_periods(&trace.u, &y, n, spec, keep, threshold)
}

/// As [`steady_period_extractor`] on raw sample vectors.
pub fn extract_periods(
    u: &[f64],
    y: &[f64],
    samples_per_period: usize,
    spec: &MultisineSpec,
    keep: usize,
    threshold: f64,
) -> Result<PeriodSpectra, SpectralError> {
    let n = samples_per_period;
    let available = u.len().min(y.len()) / n;
    if keep == 0 || available < keep + 1 {
        return Err(SpectralError::ShortRecord { available, needed: keep + 1 });
    }
    let ranges = period_ranges(available, keep, n);
    let ups: Vec<&[f64]> = ranges.iter().map(|r| &u[r.clone()]).collect();
    let yps: Vec<&[f64]> = ranges.iter().map(|r| &y[r.clone()]).collect();
    let spectra = PeriodSpectra::from_periods(&ups, &yps, spec.base_frequency, &spec.harmonics)?;
    if !(spectra.transient_metric <= threshold) {
        return Err(SpectralError::NotSettled { metric: spectra.transient_metric, threshold });
    }
    Ok(spectra)
}

/// Index ranges of the last `keep` of `available` periods of length `n`.
pub fn period_ranges(available: usize, keep: usize, n: usize) -> Vec<std::ops::Range<usize>> {
    (available - keep..available).map(|j| j * n..(j + 1) * n).collect()
}

/// FRF point of a stepped-sine measurement: the bin-1 ratio over the
/// measurement periods of a single-tone record whose first sample is the
/// start of the step.
pub fn stepped_sine_point(
    u: &[f64],
    y: &[f64],
    samples_per_period: usize,
    settle_periods: usize,
    measure_periods: usize,
) -> Result<Complex64, SpectralError> {
    let n = samples_per_period;
    let needed = settle_periods + measure_periods;
    let available = u.len().min(y.len()) / n;
    if available < needed {
        return Err(SpectralError::ShortRecord { available, needed });
    }
    let range = settle_periods * n..needed * n;
    let su = dft(&u[range.clone()])?;
    let sy = dft(&y[range])?;
    let k = measure_periods;
    if su[k].norm() == 0.0 {
        return Err(SpectralError::ZeroInput { bin: k, freq: f64::NAN });
    }
    Ok(sy[k] / su[k])
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    fn naive(x: &[f64]) -> Vec<Complex64> {
        let n = x.len();
        (0..=n / 2)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(i, &v)| v * Complex64::from_polar(1.0, -TAU * (k * i % n) as f64 / n as f64))
                    .sum::<Complex64>()
                    / n as f64
            })
            .collect()
    }

    #[test]
    fn constant_and_sine() {
        let x = dft(&[3.0; 16]).unwrap();
        assert!((x[0] - Complex64::new(3.0, 0.0)).norm() < 1e-15);
        assert!(x[1..].iter().all(|v| v.norm() < 1e-15));
        let s: Vec<f64> = (0..64).map(|n| 2.5 * (TAU * 5.0 * n as f64 / 64.0).sin()).collect();
        let x = dft(&s).unwrap();
        assert!((x[5].norm() - 1.25).abs() < 1e-14);
        assert_eq!(x.len(), 33);
        assert!(matches!(dft(&[1.0]), Err(SpectralError::TooShort(1))));
    }

    #[test]
    fn fft_matches_naive() {
        let x: Vec<f64> = (0..64).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect();
        for (a, b) in dft(&x).unwrap().iter().zip(naive(&x)) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn two_period_hand_arithmetic() {
        let one = vec![Complex64::new(1.0, 0.0)];
        let three = vec![Complex64::new(3.0, 0.0)];
        let stats = bin_statistics(&[one, three]).unwrap();
        assert_eq!(stats.mean[0], Complex64::new(2.0, 0.0));
        assert_eq!(stats.variance[0], 2.0);
        assert!(matches!(
            bin_statistics(&[vec![Complex64::new(0.0, 0.0)]]),
            Err(SpectralError::InsufficientPeriods(1))
        ));
    }

    #[test]
    fn gain_of_two() {
        let u: Vec<Complex64> = (0..5).map(|k| Complex64::new(k as f64 + 1.0, 0.5)).collect();
        let y: Vec<Complex64> = u.iter().map(|v| v * 2.0).collect();
        let excited = vec![false, true, true, false, true];
        let frf = frf_realization(&u, &y, &excited, 0.1).unwrap();
        for k in [1, 2, 4] {
            assert!((frf.g[k] - 2.0).norm() < 1e-15);
        }
        assert_eq!(frf.residual[3], y[3].norm());
        let mut u0 = u.clone();
        u0[2] = Complex64::new(0.0, 0.0);
        assert!(matches!(
            frf_realization(&u0, &y, &excited, 0.1),
            Err(SpectralError::ZeroInput { bin: 2, .. })
        ));
    }

    #[test]
    fn identical_realizations_have_no_variance() {
        let r = frf_realization(
            &[Complex64::new(1.0, 0.0), Complex64::new(2.0, 1.0)],
            &[Complex64::new(0.0, 0.0), Complex64::new(1.0, -1.0)],
            &[false, true],
            1.0,
        )
        .unwrap();
        let est = bla(&[r.clone(), r.clone(), r.clone()]).unwrap();
        assert_eq!(est.sigma2_total[1], 0.0);
        assert_eq!(est.g[1], r.g[1]);
        assert!(matches!(bla(&[r]), Err(SpectralError::InsufficientRealizations(1))));
    }

    #[test]
    fn segmentation_boundaries() {
        let r = period_ranges(6, 4, 100);
        assert_eq!(r, vec![200..300, 300..400, 400..500, 500..600]);
    }

    #[test]
    fn stepped_sine_ratio() {
        let n = 40;
        let u: Vec<f64> = (0..3 * n).map(|i| 5.0 + (TAU * i as f64 / n as f64).sin()).collect();
        let y: Vec<f64> = (0..3 * n)
            .map(|i| 1.0 + 0.5 * (TAU * i as f64 / n as f64 - 0.3).sin())
            .collect();
        let g = stepped_sine_point(&u, &y, n, 1, 2).unwrap();
        assert!((g - Complex64::from_polar(0.5, -0.3)).norm() < 1e-12);
    }
}
