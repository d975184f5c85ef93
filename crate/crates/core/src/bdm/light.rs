//! Light-intensity programs L(t).

use std::f64::consts::TAU;
use std::sync::Arc;

use crate::excitation::{MultisineSpec, PeriodicTable, SampledSignal};

/// How a sampled light sequence is read between samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    /// Zero-order hold.
    Hold,
    Linear,
}

/// A uniformly sampled light record, starting at `t0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledLight {
    pub t0: f64,
    pub sample_rate: f64,
    pub values: Vec<f64>,
    pub interpolation: Interpolation,
    /// Repeat the record with period `values.len() / sample_rate`.
    pub periodic: bool,
}

/// Light intensity as a function of time (uE m^-2 s^-1).
#[derive(Debug, Clone, PartialEq)]
pub enum LightProgram {
    Constant(f64),
    Sine {
        u_dc: f64,
        amplitude: f64,
        frequency: f64,
        phase: f64,
    },
    Multisine(MultisineSpec),
    /// A multisine read from a precomputed one-period table.
    Tabulated(Arc<(MultisineSpec, PeriodicTable)>),
    Sampled(SampledLight),
}

impl LightProgram {
    /// Multisine program backed by a table when one fits in memory.
    pub fn tabulated(spec: MultisineSpec) -> Self {
        match PeriodicTable::new(&spec) {
            Some(table) => Self::Tabulated(Arc::new((spec, table))),
            None => Self::Multisine(spec),
        }
    }

    pub fn multisine_spec(&self) -> Option<&MultisineSpec> {
        match self {
            Self::Multisine(spec) => Some(spec),
            Self::Tabulated(pair) => Some(&pair.0),
            _ => None,
        }
    }

    pub fn sampled(signal: &SampledSignal, interpolation: Interpolation) -> Self {
        Self::Sampled(SampledLight {
            t0: 0.0,
            sample_rate: signal.sample_rate,
            values: signal.samples.clone(),
            interpolation,
            periodic: false,
        })
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Self::Constant(u) => *u,
            Self::Sine {
                u_dc,
                amplitude,
                frequency,
                phase,
            } => {
                let cycles = (frequency * t).rem_euclid(1.0);
                u_dc + amplitude * (TAU * cycles + phase).sin()
            }
            Self::Multisine(spec) => spec.eval(t),
            Self::Tabulated(pair) => pair.1.eval(t),
            Self::Sampled(s) => s.eval(t),
        }
    }

    /// The DC level used to seed the initial steady state.
    pub fn dc_level(&self) -> f64 {
        match self {
            Self::Constant(u) => *u,
            Self::Sine { u_dc, .. } => *u_dc,
            Self::Multisine(spec) => spec.u_dc,
            Self::Tabulated(pair) => pair.0.u_dc,
            Self::Sampled(s) => {
                if s.values.is_empty() {
                    0.0
                } else {
                    s.values.iter().sum::<f64>() / s.values.len() as f64
                }
            }
        }
    }

    /// Highest frequency the program contains, when known.
    pub fn max_frequency(&self) -> Option<f64> {
        match self {
            Self::Constant(_) => Some(0.0),
            Self::Sine { frequency, .. } => Some(*frequency),
            Self::Multisine(spec) => Some(spec.max_frequency()),
            Self::Tabulated(pair) => Some(pair.0.max_frequency()),
            Self::Sampled(_) => None,
        }
    }

    /// Smallest value the program attains: exact for constants and sines,
    /// the dense-grid minimum for multisines and the sample minimum for
    /// sampled records.
    pub fn minimum(&self) -> f64 {
        match self {
            Self::Constant(u) => *u,
            Self::Sine { u_dc, amplitude, .. } => u_dc - amplitude.abs(),
            Self::Multisine(spec) => spec.dense_minimum().0,
            Self::Tabulated(pair) => pair.0.dense_minimum().0,
            Self::Sampled(s) => s.values.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }
}

impl SampledLight {
    pub fn duration(&self) -> f64 {
        self.values.len() as f64 / self.sample_rate
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.values.len();
        if n == 0 {
            return 0.0;
        }
        let mut pos = (t - self.t0) * self.sample_rate;
        if self.periodic {
            pos = pos.rem_euclid(n as f64);
        }
        if pos <= 0.0 {
            return self.values[0];
        }
        let i = pos.floor() as usize;
        let next = |i: usize| {
            if self.periodic {
                self.values[(i + 1) % n]
            } else {
                self.values[(i + 1).min(n - 1)]
            }
        };
        if i >= n {
            return self.values[n - 1];
        }
        match self.interpolation {
            Interpolation::Hold => self.values[i],
            Interpolation::Linear => {
                let frac = pos - i as f64;
                self.values[i] + frac * (next(i) - self.values[i])
            }
        }
    }
}
