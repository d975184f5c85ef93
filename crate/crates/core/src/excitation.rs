//! Periodic excitation signals: random-phase multisines, stepped sines and
//! crest factor.

use std::f64::consts::{FRAC_PI_2, TAU};
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExcitationError {
    #[error("invalid multisine design: {0}")]
    InvalidDesign(String),
    #[error(
        "light intensity goes negative (minimum {min:.6} at t = {t:.6} s); \
         increase u_dc above {suggested:.3} or reduce the amplitudes"
    )]
    Negative { min: f64, t: f64, suggested: f64 },
    #[error("sample rate {sample_rate} Hz is not an integer multiple of f0 = {f0} Hz")]
    Incoherent { sample_rate: f64, f0: f64 },
    #[error("sample rate {sample_rate} Hz does not exceed twice the highest tone {f_max} Hz")]
    Aliased { sample_rate: f64, f_max: f64 },
    #[error("crest factor undefined: signal has no AC component")]
    ZeroAc,
    #[error("spec file: {0}")]
    SpecFile(String),
}

/// How to place tones between `f_min` and `f_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridRule {
    Uniform,
    Logarithmic,
}

/// Per-tone amplitude choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmplitudeProfile {
    /// Every tone has this amplitude.
    Flat(f64),
    /// Equal amplitudes, scaled so the largest excursion of the AC part
    /// over one period equals this value.
    FlatPeak(f64),
    /// One amplitude per tone, in harmonic order.
    Custom(Vec<f64>),
}

/// A periodic multisine u(t) = u_dc + sum_k A_k sin(2 pi k f0 t + phi_k).
#[derive(Debug, Clone, PartialEq)]
pub struct MultisineSpec {
    pub u_dc: f64,
    pub base_frequency: f64,
    /// Distinct, ascending harmonic numbers.
    pub harmonics: Vec<u64>,
    pub amplitudes: Vec<f64>,
    pub phases: Vec<f64>,
    pub rng_seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    u_dc: f64,
    base_frequency: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rng_seed: Option<u64>,
    #[serde(default)]
    tone: Vec<ToneRow>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ToneRow {
    harmonic: u64,
    amplitude: f64,
    phase: f64,
}

impl MultisineSpec {
    /// A single tone `u_dc + amplitude sin(2 pi f t + phase)` with f0 = f.
    pub fn single_tone(u_dc: f64, amplitude: f64, frequency: f64, phase: f64) -> Self {
        Self {
            u_dc,
            base_frequency: frequency,
            harmonics: vec![1],
            amplitudes: vec![amplitude],
            phases: vec![phase],
            rng_seed: None,
        }
    }

    pub fn period(&self) -> f64 {
        1.0 / self.base_frequency
    }

    pub fn tone_frequencies(&self) -> Vec<f64> {
        self.harmonics
            .iter()
            .map(|&k| k as f64 * self.base_frequency)
            .collect()
    }

    pub fn max_frequency(&self) -> f64 {
        self.harmonics.last().map_or(0.0, |&k| k as f64 * self.base_frequency)
    }

    pub fn validate(&self) -> Result<(), ExcitationError> {
        let bad = |m: String| Err(ExcitationError::InvalidDesign(m));
        if !(self.base_frequency > 0.0 && self.base_frequency.is_finite()) {
            return bad(format!("base frequency {}", self.base_frequency));
        }
        if !self.u_dc.is_finite() {
            return bad(format!("u_dc {}", self.u_dc));
        }
        if self.amplitudes.len() != self.harmonics.len() || self.phases.len() != self.harmonics.len()
        {
            return bad("harmonic, amplitude and phase tables differ in length".into());
        }
        if self.harmonics.first() == Some(&0) {
            return bad("harmonic 0 is the DC term; use u_dc".into());
        }
        if self.harmonics.windows(2).any(|w| w[0] >= w[1]) {
            return bad("harmonics must be distinct and ascending".into());
        }
        if self
            .amplitudes
            .iter()
            .chain(&self.phases)
            .any(|v| !v.is_finite())
        {
            return bad("non-finite amplitude or phase".into());
        }
        Ok(())
    }

    /// Evaluates u(t). Time is reduced modulo the period first, so the
    /// result is exactly periodic for t on a common grid.
    pub fn eval(&self, t: f64) -> f64 {
        let tau = self.period();
        let t = t.rem_euclid(tau);
        let w = TAU * self.base_frequency * t;
        let mut u = self.u_dc;
        for ((&k, &a), &ph) in self.harmonics.iter().zip(&self.amplitudes).zip(&self.phases) {
            u += a * (k as f64 * w + ph).sin();
        }
        u
    }

    /// AC part of one period on `n` equally spaced points, via inverse FFT
    /// of the line spectrum. Requires every harmonic below n/2.
    pub fn synthesize_ac(&self, n: usize) -> Vec<f64> {
        self.synthesize(n, |_, a, ph| (a, ph))
    }

    /// du/dt over one period on `n` equally spaced points.
    pub fn synthesize_derivative(&self, n: usize) -> Vec<f64> {
        let w0 = TAU * self.base_frequency;
        self.synthesize(n, |k, a, ph| (a * k as f64 * w0, ph + FRAC_PI_2))
    }

    fn synthesize(&self, n: usize, tone: impl Fn(u64, f64, f64) -> (f64, f64)) -> Vec<f64> {
        let mut spectrum = vec![Complex64::new(0.0, 0.0); n];
        for ((&k, &a), &ph) in self.harmonics.iter().zip(&self.amplitudes).zip(&self.phases) {
            let (a, ph) = tone(k, a, ph);
            let k = k as usize;
            assert!(2 * k < n, "harmonic {k} not representable on {n} points");
            // A sin(x + ph) = A/(2i) e^{i(x+ph)} - A/(2i) e^{-i(x+ph)}
            let c = Complex64::from_polar(a / 2.0, ph) * Complex64::new(0.0, -1.0);
            spectrum[k] += c;
            spectrum[n - k] += c.conj();
        }
        let mut planner = FftPlanner::new();
        planner.plan_fft_inverse(n).process(&mut spectrum);
        spectrum.into_iter().map(|z| z.re).collect()
    }

    /// Dense check of u(t) >= 0 over one period with at least 32 points per
    /// fastest excited period. Returns (minimum, time of minimum).
    pub fn dense_minimum(&self) -> (f64, f64) {
        let k_max = self.harmonics.last().copied().unwrap_or(1) as usize;
        let n = dense_len(k_max);
        let ac = self.synthesize_ac(n);
        let (i, m) = ac
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
        (self.u_dc + m, i as f64 * self.period() / n as f64)
    }

    pub fn check_nonnegative(&self) -> Result<(), ExcitationError> {
        let (min, t) = self.dense_minimum();
        if min < 0.0 {
            return Err(ExcitationError::Negative {
                min,
                t,
                suggested: self.u_dc - min,
            });
        }
        Ok(())
    }

    pub fn to_spec_string(&self) -> String {
        let file = SpecFile {
            u_dc: self.u_dc,
            base_frequency: self.base_frequency,
            rng_seed: self.rng_seed,
            tone: self
                .harmonics
                .iter()
                .zip(&self.amplitudes)
                .zip(&self.phases)
                .map(|((&harmonic, &amplitude), &phase)| ToneRow { harmonic, amplitude, phase })
                .collect(),
        };
        toml::to_string(&file).expect("spec serialises")
    }

    pub fn from_spec_str(text: &str) -> Result<Self, ExcitationError> {
        let file: SpecFile =
            toml::from_str(text).map_err(|e| ExcitationError::SpecFile(e.to_string()))?;
        let spec = Self {
            u_dc: file.u_dc,
            base_frequency: file.base_frequency,
            harmonics: file.tone.iter().map(|t| t.harmonic).collect(),
            amplitudes: file.tone.iter().map(|t| t.amplitude).collect(),
            phases: file.tone.iter().map(|t| t.phase).collect(),
            rng_seed: file.rng_seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_spec_string())
    }

    pub fn load(path: &Path) -> Result<Self, ExcitationError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExcitationError::SpecFile(format!("{}: {e}", path.display())))?;
        Self::from_spec_str(&text)
    }
}

fn dense_len(k_max: usize) -> usize {
    (32 * k_max).max(64).next_power_of_two()
}

/// One period of a multisine tabulated with its derivative and read back
/// by cubic Hermite interpolation. With 128 nodes per fastest period the
/// interpolation error is below 2e-8 of the largest tone amplitude.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicTable {
    u_dc: f64,
    period: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

/// Largest table built by [`PeriodicTable::new`].
pub const MAX_TABLE_NODES: usize = 1 << 23;

impl PeriodicTable {
    pub fn new(spec: &MultisineSpec) -> Option<Self> {
        let k_max = spec.harmonics.last().copied()? as usize;
        let n = 128 * k_max;
        if n > MAX_TABLE_NODES {
            return None;
        }
        let period = spec.period();
        // Slopes per node spacing, as the Hermite basis expects.
        let dt = period / n as f64;
        let slopes = spec.synthesize_derivative(n).into_iter().map(|d| d * dt).collect();
        Some(Self {
            u_dc: spec.u_dc,
            period,
            values: spec.synthesize_ac(n),
            slopes,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.values.len();
        let pos = (t / self.period).rem_euclid(1.0) * n as f64;
        let i = (pos.floor() as usize).min(n - 1);
        let s = pos - i as f64;
        let j = if i + 1 == n { 0 } else { i + 1 };
        let (p0, p1, m0, m1) = (self.values[i], self.values[j], self.slopes[i], self.slopes[j]);
        let s2 = s * s;
        let s3 = s2 * s;
        self.u_dc
            + (2.0 * s3 - 3.0 * s2 + 1.0) * p0
            + (s3 - 2.0 * s2 + s) * m0
            + (-2.0 * s3 + 3.0 * s2) * p1
            + (s3 - s2) * m1
    }
}

/// Draws `count` phases uniformly on [0, 2 pi) from a seeded ChaCha20 stream.
pub fn random_phases(seed: u64, count: usize) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..count).map(|_| rng.gen::<f64>() * TAU).collect()
}

/// Harmonic numbers of f0 = f_min for the requested grid.
pub fn harmonic_grid(
    f_min: f64,
    f_max: f64,
    tone_count: usize,
    rule: GridRule,
) -> Result<Vec<u64>, ExcitationError> {
    let bad = |m: String| Err(ExcitationError::InvalidDesign(m));
    if !(f_min > 0.0 && f_max >= f_min && f_max.is_finite()) {
        return bad(format!("need 0 < f_min <= f_max, got {f_min}, {f_max}"));
    }
    if tone_count == 0 {
        return bad("tone_count must be >= 1".into());
    }
    let k_max = (f_max / f_min).round() as u64;
    if tone_count == 1 {
        return Ok(vec![1]);
    }
    if f_max == f_min {
        return bad("several tones need f_max > f_min".into());
    }
    if tone_count as u64 > k_max {
        return bad(format!(
            "{tone_count} tones do not fit in the {k_max} harmonics between f_min and f_max"
        ));
    }
    let targets: Vec<f64> = (0..tone_count)
        .map(|i| {
            let x = i as f64 / (tone_count - 1) as f64;
            match rule {
                GridRule::Uniform => 1.0 + x * (k_max as f64 - 1.0),
                GridRule::Logarithmic => (k_max as f64).powf(x),
            }
        })
        .collect();
    let mut used = std::collections::BTreeSet::new();
    for target in targets {
        let nearest = target.round().max(1.0) as u64;
        // Nearest free harmonic, ties going up.
        let mut chosen = None;
        for d in 0..=k_max {
            let up = nearest + d;
            if up <= k_max && !used.contains(&up) {
                chosen = Some(up);
                break;
            }
            if d > 0 && d < nearest {
                let down = nearest - d;
                if !used.contains(&down) {
                    chosen = Some(down);
                    break;
                }
            }
        }
        match chosen {
            Some(k) => {
                used.insert(k);
            }
            None => return bad("ran out of free harmonics".into()),
        }
    }
    Ok(used.into_iter().collect())
}

/// Random-phase multisine with the requested spectrum. The base frequency is
/// `f_min`, so the slowest tone sets the period. Fails when the signal
/// would go negative.
pub fn design_multisine(
    u_dc: f64,
    amplitude: &AmplitudeProfile,
    f_min: f64,
    f_max: f64,
    tone_count: usize,
    grid: GridRule,
    rng_seed: u64,
) -> Result<MultisineSpec, ExcitationError> {
    let harmonics = harmonic_grid(f_min, f_max, tone_count, grid)?;
    let phases = random_phases(rng_seed, harmonics.len());
    let amplitudes = match amplitude {
        AmplitudeProfile::Flat(a) | AmplitudeProfile::FlatPeak(a) => vec![*a; harmonics.len()],
        AmplitudeProfile::Custom(v) => {
            if v.len() != harmonics.len() {
                return Err(ExcitationError::InvalidDesign(format!(
                    "{} custom amplitudes for {} tones",
                    v.len(),
                    harmonics.len()
                )));
            }
            v.clone()
        }
    };
    let mut spec = MultisineSpec {
        u_dc,
        base_frequency: f_min,
        harmonics,
        amplitudes,
        phases,
        rng_seed: Some(rng_seed),
    };
    spec.validate()?;
    if let AmplitudeProfile::FlatPeak(peak) = amplitude {
        let k_max = *spec.harmonics.last().unwrap() as usize;
        let ac = spec.synthesize_ac(dense_len(k_max));
        let current = ac.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if current > 0.0 {
            let scale = peak / current;
            for a in &mut spec.amplitudes {
                *a *= scale;
            }
        }
    }
    spec.check_nonnegative()?;
    Ok(spec)
}

/// Uniformly sampled periodic record.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSignal {
    pub sample_rate: f64,
    pub samples: Vec<f64>,
    pub periods: usize,
    pub samples_per_period: usize,
}

impl SampledSignal {
    pub fn period(&self, j: usize) -> &[f64] {
        let n = self.samples_per_period;
        &self.samples[j * n..(j + 1) * n]
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.samples.len()).map(move |i| i as f64 / self.sample_rate)
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let rows = self
            .times()
            .zip(&self.samples)
            .map(|(t, &u)| vec![t, u]);
        io::write_csv(path, &["t", "u"], rows)
    }
}

/// Samples per period for a coherent record, or an error if `sample_rate`
/// is not an integer multiple of `f0`.
pub fn samples_per_period(sample_rate: f64, f0: f64) -> Result<usize, ExcitationError> {
    let n = sample_rate / f0;
    let rounded = n.round();
    if !(rounded >= 1.0) || (n - rounded).abs() > 1e-9 * rounded {
        return Err(ExcitationError::Incoherent { sample_rate, f0 });
    }
    Ok(rounded as usize)
}

/// Renders `periods` exact periods at `sample_rate`. One period is computed
/// and tiled, so all periods are bit-identical.
pub fn render(
    spec: &MultisineSpec,
    sample_rate: f64,
    periods: usize,
) -> Result<SampledSignal, ExcitationError> {
    spec.validate()?;
    let f_max = spec.max_frequency();
    if !(sample_rate > 2.0 * f_max) {
        return Err(ExcitationError::Aliased { sample_rate, f_max });
    }
    let n = samples_per_period(sample_rate, spec.base_frequency)?;
    let one: Vec<f64> = spec
        .synthesize_ac(n)
        .into_iter()
        .map(|v| v + spec.u_dc)
        .collect();
    if let Some((i, &min)) = one
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
    {
        if min < 0.0 {
            return Err(ExcitationError::Negative {
                min,
                t: i as f64 / sample_rate,
                suggested: spec.u_dc - min,
            });
        }
    }
    let mut samples = Vec::with_capacity(n * periods);
    for _ in 0..periods {
        samples.extend_from_slice(&one);
    }
    Ok(SampledSignal {
        sample_rate,
        samples,
        periods,
        samples_per_period: n,
    })
}

/// Peak of |AC| over RMS of AC, where AC is the signal minus its mean.
pub fn crest_factor(signal: &SampledSignal) -> Result<f64, ExcitationError> {
    crest_factor_of(&signal.samples)
}

pub fn crest_factor_of(samples: &[f64]) -> Result<f64, ExcitationError> {
    if samples.is_empty() {
        return Err(ExcitationError::ZeroAc);
    }
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let (peak, energy) = samples.iter().fold((0.0f64, 0.0), |(p, e), &v| {
        let ac = v - mean;
        (p.max(ac.abs()), e + ac * ac)
    });
    let rms = (energy / samples.len() as f64).sqrt();
    if !(rms > 1e-300) || peak <= 1e-12 * mean.abs() {
        return Err(ExcitationError::ZeroAc);
    }
    Ok(peak / rms)
}

/// One frequency of a stepped-sine measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct SteppedSineStep {
    pub spec: MultisineSpec,
    pub settle_periods: usize,
    pub measure_periods: usize,
    /// Start of this step within the whole schedule (s).
    pub start_time: f64,
}

impl SteppedSineStep {
    pub fn frequency(&self) -> f64 {
        self.spec.base_frequency
    }

    pub fn duration(&self) -> f64 {
        (self.settle_periods + self.measure_periods) as f64 / self.frequency()
    }
}

/// Single-tone specs with settle and measurement period counts, laid end
/// to end in the given frequency order.
pub fn stepped_sine_schedule(
    u_dc: f64,
    amplitude: f64,
    frequencies: &[f64],
    settle_periods: usize,
    measure_periods: usize,
) -> Result<Vec<SteppedSineStep>, ExcitationError> {
    if frequencies.is_empty() {
        return Err(ExcitationError::InvalidDesign("no frequencies".into()));
    }
    if frequencies.iter().any(|f| !(*f > 0.0 && f.is_finite())) {
        return Err(ExcitationError::InvalidDesign("frequencies must be positive".into()));
    }
    if frequencies.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ExcitationError::InvalidDesign("frequencies must be sorted ascending".into()));
    }
    if measure_periods == 0 {
        return Err(ExcitationError::InvalidDesign("measure_periods must be >= 1".into()));
    }
    let mut start = 0.0;
    let mut steps = Vec::with_capacity(frequencies.len());
    for &f in frequencies {
        let spec = MultisineSpec::single_tone(u_dc, amplitude, f, 0.0);
        spec.check_nonnegative()?;
        let step = SteppedSineStep {
            spec,
            settle_periods,
            measure_periods,
            start_time: start,
        };
        start += step.duration();
        steps.push(step);
    }
    Ok(steps)
}
