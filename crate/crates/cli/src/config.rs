use std::path::{Path, PathBuf};

use photosid::bdm::{BdmOverrides, BdmParameters};
use photosid::excitation::{AmplitudeProfile, GridRule};
use photosid::lpv::ScheduleFitOptions;
use photosid::tf::{StabilityPolicy, WeightRule};
use serde::{Deserialize, Serialize};

use crate::PipelineError;

pub const DESK_CONFIG: &str = include_str!("../../../configs/desk.cfg");
pub const FULL_CONFIG: &str = include_str!("../../../configs/full.cfg");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AmplitudeRule {
    /// Every tone gets `amplitude`.
    Flat,
    /// Equal tone amplitudes with the peak AC excursion equal to `amplitude`.
    FlatPeak,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultisineConfig {
    pub grid: GridRule,
    pub f_min: f64,
    pub f_max: f64,
    pub tones: usize,
    pub amplitude: f64,
    pub amplitude_rule: AmplitudeRule,
    /// M
    pub realizations: usize,
    /// P, steady-state periods kept per realization.
    pub periods: usize,
    pub transient_periods: usize,
    pub sample_rate: f64,
    /// Relative rms change between the first kept and the last period.
    pub settle_threshold: f64,
}

impl MultisineConfig {
    pub fn profile(&self) -> AmplitudeProfile {
        match self.amplitude_rule {
            AmplitudeRule::Flat => AmplitudeProfile::Flat(self.amplitude),
            AmplitudeRule::FlatPeak => AmplitudeProfile::FlatPeak(self.amplitude),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub rtol: f64,
    pub max_steps: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self { rtol: 1e-6, max_steps: 50_000_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub min: f64,
    pub step: f64,
    pub max: f64,
}

impl GridConfig {
    pub fn points(&self) -> Vec<f64> {
        if self.step <= 0.0 {
            return vec![self.min];
        }
        let n = ((self.max - self.min) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|i| self.min + self.step * i as f64).collect()
    }

    /// Parses `min:step:max`.
    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        let parts: Vec<&str> = text.split(':').collect();
        let bad = || PipelineError::Config(format!("grid `{text}`: expected min:step:max"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let v: Vec<f64> = parts
            .iter()
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad())?;
        let g = Self { min: v[0], step: v[1], max: v[2] };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let ok = self.min.is_finite()
            && self.max.is_finite()
            && self.min >= 0.0
            && self.max >= self.min
            && self.step >= 0.0
            && (self.step > 0.0 || self.max == self.min);
        if ok {
            Ok(())
        } else {
            Err(PipelineError::Config(format!(
                "grid {}:{}:{} is not an ascending range",
                self.min, self.step, self.max
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub na: usize,
    pub nb: usize,
    pub weights: WeightRule,
    pub stability: StabilityPolicy,
    /// Band for the magnitude error report.
    pub f_lo: f64,
    pub f_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub gain_degree: usize,
    pub pole_zero_degree: usize,
    pub harmonics: usize,
    pub f0_ss: f64,
    pub estimate_f0: bool,
    pub min_models: usize,
}

impl ScheduleConfig {
    pub fn options(&self) -> ScheduleFitOptions {
        ScheduleFitOptions {
            gain_degree: self.gain_degree,
            pole_zero_degree: self.pole_zero_degree,
            harmonics: self.harmonics,
            f0_ss: self.f0_ss,
            estimate_f0: self.estimate_f0,
            min_models: self.min_models,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToneConfig {
    pub frequency: f64,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum CaseConfig {
    Sine {
        name: String,
        u_dc: f64,
        amplitude: f64,
        frequency: f64,
    },
    Multisine {
        name: String,
        u_dc: f64,
        base_frequency: f64,
        #[serde(rename = "tone")]
        tones: Vec<ToneConfig>,
    },
}

impl CaseConfig {
    pub fn name(&self) -> &str {
        match self {
            CaseConfig::Sine { name, .. } | CaseConfig::Multisine { name, .. } => name,
        }
    }

    pub fn u_dc(&self) -> f64 {
        match self {
            CaseConfig::Sine { u_dc, .. } | CaseConfig::Multisine { u_dc, .. } => *u_dc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationConfig {
    pub sample_rate: f64,
    /// Minimum samples per cycle of the fastest tone.
    pub samples_per_cycle: f64,
    pub sine_duration: f64,
    pub multisine_duration: f64,
    #[serde(rename = "case")]
    pub cases: Vec<CaseConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub warning: Option<String>,
    pub bdm: BdmOverrides,
    #[serde(default)]
    pub simulation: SimulationConfig,
    pub multisine: MultisineConfig,
    pub grid: GridConfig,
    pub fit: FitConfig,
    pub schedule: ScheduleConfig,
    pub validation: ValidationConfig,
}

impl ExperimentConfig {
    pub fn desk() -> Self {
        Self::from_config_str(DESK_CONFIG).expect("bundled desk config parses")
    }

    pub fn full_scale() -> Self {
        Self::from_config_str(FULL_CONFIG).expect("bundled full-scale config parses")
    }

    pub fn from_config_str(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_config_str(&text)
    }

    pub fn to_config_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn parameters(&self) -> Result<BdmParameters, PipelineError> {
        BdmParameters::from_overrides(&self.bdm).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let fail = |m: String| Err(PipelineError::Config(m));
        self.parameters()?;
        self.grid.validate()?;
        let m = &self.multisine;
        if !(m.f_min > 0.0 && m.f_max > m.f_min) || m.tones == 0 {
            return fail(format!("multisine band {}..{} with {} tones", m.f_min, m.f_max, m.tones));
        }
        if m.realizations < 1 || m.periods < 1 {
            return fail("multisine needs at least one realization and one kept period".into());
        }
        if !(m.sample_rate > 2.0 * m.f_max) {
            return fail(format!("sample rate {} does not cover f_max {}", m.sample_rate, m.f_max));
        }
        if !(m.amplitude > 0.0) {
            return fail("multisine amplitude must be positive".into());
        }
        if self.fit.na == 0 || !(self.fit.f_hi > self.fit.f_lo) {
            return fail("fit order or band invalid".into());
        }
        if !(self.simulation.rtol > 0.0) {
            return fail("rtol must be positive".into());
        }
        let v = &self.validation;
        if !(v.sample_rate > 0.0 && v.samples_per_cycle > 2.0) {
            return fail("validation sampling invalid".into());
        }
        let mut names: Vec<&str> = v.cases.iter().map(|c| c.name()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return fail("validation case names must be unique".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_configs_parse() {
        let d = ExperimentConfig::desk();
        assert_eq!(d.grid.points().len(), 19);
        assert_eq!(d.multisine.tones, 200);
        assert_eq!(d.validation.cases.len(), 9);
        let p = ExperimentConfig::full_scale();
        assert!(p.warning.is_some());
        assert_eq!(p.multisine.tones, 30_000);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = format!("{DESK_CONFIG}\nbogus = 1\n");
        assert!(matches!(ExperimentConfig::from_config_str(&text), Err(PipelineError::Config(_))));
    }

    #[test]
    fn grid_flag() {
        let g = GridConfig::parse("100:50:1000").unwrap();
        assert_eq!(g.points().len(), 19);
        assert_eq!(GridConfig::parse("100:0:100").unwrap().points(), vec![100.0]);
        assert!(GridConfig::parse("100:50").is_err());
        assert!(GridConfig::parse("500:50:100").is_err());
    }

    #[test]
    fn round_trip() {
        let d = ExperimentConfig::desk();
        assert_eq!(ExperimentConfig::from_config_str(&d.to_config_string()).unwrap(), d);
    }
}
