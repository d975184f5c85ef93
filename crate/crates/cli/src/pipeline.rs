//! The experiment stages. Every stage reads its inputs from files written
//! by the previous one, so stages can be rerun independently.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use photosid::bdm::{
    simulate, steady_state, BdmParameters, LightProgram, SimulationOptions, SteadyStateOptions,
};
use photosid::excitation::{design_multisine, render, MultisineSpec};
use photosid::io::{fmt_f64, read_csv, write_csv};
use photosid::lpv::{
    fit_schedules, lpv_simulate, r_squared, LpvSchedule, RangePolicy, SchedulingPolicy,
    TrackedModels,
};
use photosid::spectral::{
    analyze_realization, bla, bla_single, steady_period_extractor, FrfEstimate, RealizationFrf,
};
use photosid::tf::{
    enforce_stability, fit_local_model, magnitude_error_db, tf_to_zpk, zpk_to_tf, LocalFit,
    ModelRecord, WeightRule, ZpkModel,
};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::config::{CaseConfig, ExperimentConfig};
use crate::PipelineError;

/// Substream role for multisine phase draws.
pub const EXCITATION_STREAM: u64 = 1;

/// Seed for one random draw, fixed by the global seed, the role and the
/// (grid point, realization) indices.
pub fn substream_seed(global: u64, role: u64, grid_index: usize, realization: usize) -> u64 {
    let mut rng = ChaCha20Rng::seed_from_u64(global);
    rng.set_stream((role << 48) | ((grid_index as u64 & 0xff_ffff) << 24) | (realization as u64 & 0xff_ffff));
    rng.next_u64()
}

/// `100`, `420`, `362.5`.
pub fn u_label(u: f64) -> String {
    format!("{u}")
}

/// File layout of a run directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn excitation(&self, u: f64, r: usize) -> PathBuf {
        self.root.join("excitation").join(format!("u{}_r{r}.toml", u_label(u)))
    }
    pub fn frf(&self, u: f64) -> PathBuf {
        self.root.join("frf").join(format!("u{}.csv", u_label(u)))
    }
    pub fn models_dir(&self) -> PathBuf {
        self.root.join("models")
    }
    pub fn model(&self, u: f64) -> PathBuf {
        self.models_dir().join(format!("u{}.toml", u_label(u)))
    }
    pub fn identify_summary(&self) -> PathBuf {
        self.root.join("identify_summary.csv")
    }
    pub fn steady_states(&self) -> PathBuf {
        self.root.join("steady_state.csv")
    }
    pub fn schedule(&self) -> PathBuf {
        self.root.join("schedule.toml")
    }
    pub fn schedule_r2(&self) -> PathBuf {
        self.root.join("schedule_r2.csv")
    }
    pub fn tracked(&self) -> PathBuf {
        self.root.join("tracked_models.csv")
    }
    pub fn validation_dir(&self, label: &str) -> PathBuf {
        self.root.join("validation").join(label)
    }
    pub fn figures_dir(&self) -> PathBuf {
        self.root.join("figures")
    }
}

pub fn simulation_options(cfg: &ExperimentConfig) -> SimulationOptions {
    SimulationOptions {
        rtol: cfg.simulation.rtol,
        max_steps: cfg.simulation.max_steps,
        ..SimulationOptions::default()
    }
}

pub fn design_realization(
    cfg: &ExperimentConfig,
    grid_index: usize,
    realization: usize,
    u_dc: f64,
) -> Result<MultisineSpec, PipelineError> {
    let m = &cfg.multisine;
    let seed = substream_seed(cfg.seed, EXCITATION_STREAM, grid_index, realization);
    design_multisine(u_dc, &m.profile(), m.f_min, m.f_max, m.tones, m.grid, seed)
        .map_err(PipelineError::numeric)
}

/// Simulates one multisine realization from the DC steady state and
/// returns its FRF over the kept periods.
pub fn run_realization(
    cfg: &ExperimentConfig,
    params: &BdmParameters,
    spec: &MultisineSpec,
) -> Result<RealizationFrf, PipelineError> {
    let m = &cfg.multisine;
    let duration = (m.transient_periods + m.periods) as f64 * spec.period();
    let program = LightProgram::tabulated(spec.clone());
    let trace = simulate(params, &program, None, (0.0, duration), m.sample_rate, &simulation_options(cfg))
        .map_err(PipelineError::numeric)?;
    let spectra = steady_period_extractor(&trace, spec, m.periods, m.settle_threshold)
        .map_err(PipelineError::numeric)?;
    analyze_realization(&spectra).map_err(PipelineError::numeric)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone)]
pub struct PointResult {
    pub u_dc: f64,
    pub specs: Vec<MultisineSpec>,
    pub frf: FrfEstimate,
    pub ls: LocalFit,
    pub wls: LocalFit,
    /// Fitted zpk before stability enforcement.
    pub raw: ZpkModel,
    pub model: ZpkModel,
    pub separation_median_db: f64,
    pub magnitude_error_db: f64,
    pub ls_magnitude_error_db: f64,
}

impl PointResult {
    pub fn reflected(&self) -> bool {
        self.raw.poles != self.model.poles
    }

    pub fn record(&self) -> ModelRecord {
        ModelRecord {
            tf: zpk_to_tf(&self.model),
            zpk: self.model.clone(),
            diagnostics: Some(self.wls.diagnostics.clone()),
        }
    }
}

/// Weighted and uniform fits of `frf` with the configured order, and the
/// weighted model before and after stability enforcement.
pub fn fit_point(cfg: &ExperimentConfig, u_dc: f64, frf: &FrfEstimate) -> Result<(LocalFit, LocalFit, ZpkModel, ZpkModel), PipelineError> {
    let f = &cfg.fit;
    let wls = fit_local_model(frf, f.na, f.nb, &f.weights).map_err(PipelineError::numeric)?;
    let ls = fit_local_model(frf, f.na, f.nb, &WeightRule::Uniform).map_err(PipelineError::numeric)?;
    let mut raw = tf_to_zpk(&wls.tf).map_err(PipelineError::numeric)?;
    raw.u_dc = Some(u_dc);
    let model = enforce_stability(&raw, f.stability).map_err(PipelineError::numeric)?;
    Ok((ls, wls, raw, model))
}

/// Designs, simulates and averages the M realizations of one grid point.
pub fn estimate_frf(
    cfg: &ExperimentConfig,
    params: &BdmParameters,
    grid_index: usize,
    u_dc: f64,
) -> Result<(Vec<MultisineSpec>, FrfEstimate), PipelineError> {
    let specs = (0..cfg.multisine.realizations)
        .map(|r| design_realization(cfg, grid_index, r, u_dc))
        .collect::<Result<Vec<_>, _>>()?;
    let realizations = specs
        .par_iter()
        .map(|spec| run_realization(cfg, params, spec))
        .collect::<Result<Vec<_>, _>>()?;
    let frf = if realizations.len() >= 2 {
        bla(&realizations).map_err(PipelineError::numeric)?
    } else {
        bla_single(&realizations[0])
    };
    Ok((specs, frf))
}

pub fn identify_point(
    cfg: &ExperimentConfig,
    params: &BdmParameters,
    grid_index: usize,
    u_dc: f64,
) -> Result<PointResult, PipelineError> {
    let m = &cfg.multisine;
    let (specs, frf) = estimate_frf(cfg, params, grid_index, u_dc)?;
    let (ls, wls, raw, model) = fit_point(cfg, u_dc, &frf)?;
    let (lo, hi) = (cfg.fit.f_lo, cfg.fit.f_hi);
    let wls_error = magnitude_error_db(&zpk_to_tf(&model), &frf, lo, hi);
    let ls_error = magnitude_error_db(&ls.tf, &frf, lo, hi);
    Ok(PointResult {
        u_dc,
        separation_median_db: median(&frf.separation_db(m.f_min, m.f_max)),
        specs,
        frf,
        ls,
        wls,
        raw,
        model,
        magnitude_error_db: wls_error,
        ls_magnitude_error_db: ls_error,
    })
}

#[derive(Debug)]
pub struct PointOutcome {
    pub index: usize,
    pub u_dc: f64,
    pub result: Result<PointResult, PipelineError>,
    pub y_ss: Result<f64, PipelineError>,
}

#[derive(Debug)]
pub struct IdentifyReport {
    pub points: Vec<PointOutcome>,
    pub artifacts: Vec<PathBuf>,
}

impl IdentifyReport {
    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        for p in &self.points {
            if let Err(e) = &p.result {
                out.push(format!("u_dc={}: {e}", u_label(p.u_dc)));
            }
            if let Err(e) = &p.y_ss {
                out.push(format!("u_dc={} steady state: {e}", u_label(p.u_dc)));
            }
        }
        out
    }

    pub fn point(&self, u_dc: f64) -> Option<&PointResult> {
        self.points
            .iter()
            .find(|p| p.u_dc == u_dc)
            .and_then(|p| p.result.as_ref().ok())
    }
}

/// Identifies a local model at every grid point. Failures stay with their
/// grid point.
pub fn identify(cfg: &ExperimentConfig, out: &Path) -> Result<IdentifyReport, PipelineError> {
    let params = cfg.parameters()?;
    let layout = Layout::new(out);
    let grid = cfg.grid.points();
    let points: Vec<PointOutcome> = grid
        .par_iter()
        .enumerate()
        .map(|(index, &u_dc)| PointOutcome {
            index,
            u_dc,
            result: identify_point(cfg, &params, index, u_dc),
            y_ss: steady_state(&params, u_dc, &SteadyStateOptions::default())
                .map(|s| s.y_ss)
                .map_err(PipelineError::numeric),
        })
        .collect();

    let mut artifacts = Vec::new();
    for p in &points {
        let Ok(r) = &p.result else { continue };
        artifacts.extend(save_specs(&layout, p.u_dc, &r.specs)?);
        let path = layout.frf(p.u_dc);
        r.frf.write_csv(&path)?;
        artifacts.push(path);
        let path = layout.model(p.u_dc);
        std::fs::create_dir_all(layout.models_dir())?;
        r.record().save(&path)?;
        artifacts.push(path);
    }
    let yss_rows: Vec<[f64; 2]> = points
        .iter()
        .filter_map(|p| p.y_ss.as_ref().ok().map(|&y| [p.u_dc, y]))
        .collect();
    write_csv(&layout.steady_states(), &["u_dc", "y_ss"], &yss_rows)?;
    artifacts.push(layout.steady_states());
    write_identify_summary(&layout.identify_summary(), &points)?;
    artifacts.push(layout.identify_summary());
    Ok(IdentifyReport { points, artifacts })
}

fn write_identify_summary(path: &Path, points: &[PointOutcome]) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        f,
        "u_dc,status,separation_db,mag_error_db,ls_mag_error_db,K,Z1,Z2,P1,P2,reflected,message"
    )?;
    for p in points {
        match &p.result {
            Ok(r) => {
                let m = &r.model;
                writeln!(
                    f,
                    "{},ok,{},{},{},{},{},{},{},{},{},",
                    fmt_f64(p.u_dc),
                    fmt_f64(r.separation_median_db),
                    fmt_f64(r.magnitude_error_db),
                    fmt_f64(r.ls_magnitude_error_db),
                    fmt_f64(m.gain),
                    fmt_f64(m.zeros.first().map_or(f64::NAN, |z| z.re)),
                    fmt_f64(m.zeros.get(1).map_or(f64::NAN, |z| z.re)),
                    fmt_f64(m.poles.first().map_or(f64::NAN, |z| z.re)),
                    fmt_f64(m.poles.get(1).map_or(f64::NAN, |z| z.re)),
                    r.reflected(),
                )?;
            }
            Err(e) => writeln!(
                f,
                "{},failed,,,,,,,,,,\"{}\"",
                fmt_f64(p.u_dc),
                e.to_string().replace('"', "'")
            )?,
        }
    }
    f.flush()
}


fn save_specs(layout: &Layout, u_dc: f64, specs: &[MultisineSpec]) -> std::io::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for (i, spec) in specs.iter().enumerate() {
        let path = layout.excitation(u_dc, i);
        std::fs::create_dir_all(path.parent().unwrap())?;
        spec.save(&path)?;
        out.push(path);
    }
    Ok(out)
}

/// Outcome of a per-grid-point stage: written files and failures.
#[derive(Debug, Default)]
pub struct StageReport {
    pub artifacts: Vec<PathBuf>,
    pub failures: Vec<String>,
    pub total: usize,
}

/// Writes multisine designs and their rendered first period for every
/// grid point.
pub fn excite_stage(cfg: &ExperimentConfig, out: &Path) -> Result<StageReport, PipelineError> {
    let layout = Layout::new(out);
    let mut report = StageReport::default();
    for (index, u_dc) in cfg.grid.points().into_iter().enumerate() {
        for r in 0..cfg.multisine.realizations {
            report.total += 1;
            let spec = match design_realization(cfg, index, r, u_dc) {
                Ok(s) => s,
                Err(e) => {
                    report.failures.push(format!("u_dc={} r={r}: {e}", u_label(u_dc)));
                    continue;
                }
            };
            let path = layout.excitation(u_dc, r);
            std::fs::create_dir_all(path.parent().unwrap())?;
            spec.save(&path)?;
            report.artifacts.push(path);
            match render(&spec, cfg.multisine.sample_rate, 1) {
                Ok(sig) => {
                    let path = layout.excitation(u_dc, r).with_extension("csv");
                    sig.write_csv(&path)?;
                    report.artifacts.push(path);
                }
                Err(e) => report.failures.push(format!("u_dc={} r={r}: {e}", u_label(u_dc))),
            }
        }
    }
    Ok(report)
}

/// Estimates and writes the BLA of every grid point.
pub fn frf_stage(cfg: &ExperimentConfig, out: &Path) -> Result<StageReport, PipelineError> {
    let params = cfg.parameters()?;
    let layout = Layout::new(out);
    let grid = cfg.grid.points();
    let results: Vec<_> = grid
        .par_iter()
        .enumerate()
        .map(|(i, &u)| estimate_frf(cfg, &params, i, u))
        .collect();
    let mut report = StageReport { total: grid.len(), ..Default::default() };
    for (&u, r) in grid.iter().zip(results) {
        match r {
            Ok((specs, frf)) => {
                report.artifacts.extend(save_specs(&layout, u, &specs)?);
                frf.write_csv(&layout.frf(u))?;
                report.artifacts.push(layout.frf(u));
            }
            Err(e) => report.failures.push(format!("u_dc={}: {e}", u_label(u))),
        }
    }
    Ok(report)
}

/// Fits a local model to every FRF file of the grid.
pub fn fit_stage(cfg: &ExperimentConfig, out: &Path) -> Result<StageReport, PipelineError> {
    let layout = Layout::new(out);
    let grid = cfg.grid.points();
    let mut report = StageReport { total: grid.len(), ..Default::default() };
    std::fs::create_dir_all(layout.models_dir())?;
    for u in grid {
        let path = layout.frf(u);
        let fitted = FrfEstimate::read_csv(&path, cfg.multisine.realizations, cfg.multisine.periods)
            .map_err(|e| PipelineError::Numeric(format!("{}: {e}", path.display())))
            .and_then(|frf| fit_point(cfg, u, &frf).map(|f| (f, frf)));
        match fitted {
            Ok(((_, wls, _, model), _)) => {
                let rec = ModelRecord { tf: zpk_to_tf(&model), zpk: model, diagnostics: Some(wls.diagnostics) };
                rec.save(&layout.model(u))?;
                report.artifacts.push(layout.model(u));
            }
            Err(e) => report.failures.push(format!("u_dc={}: {e}", u_label(u))),
        }
    }
    Ok(report)
}

/// Loads every model file under `dir`, in file-name order.
pub fn load_models(dir: &Path) -> Result<Vec<ModelRecord>, PipelineError> {
    if !dir.is_dir() {
        return Err(PipelineError::MissingArtifact(dir.to_path_buf()));
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| ModelRecord::load(p).map_err(|e| PipelineError::Numeric(format!("{}: {e}", p.display()))))
        .collect()
}

pub fn load_steady_states(path: &Path) -> Result<Vec<(f64, f64)>, PipelineError> {
    if !path.is_file() {
        return Err(PipelineError::MissingArtifact(path.to_path_buf()));
    }
    let (_, rows) = read_csv(path)?;
    Ok(rows.iter().filter(|r| r.len() >= 2).map(|r| (r[0], r[1])).collect())
}

#[derive(Debug)]
pub struct BuildReport {
    pub schedule: LpvSchedule,
    pub tracked: TrackedModels,
    pub artifacts: Vec<PathBuf>,
}

/// Fits the LPV schedule from the model files and steady-state table of
/// `run_dir`.
pub fn lpv_build(cfg: &ExperimentConfig, run_dir: &Path) -> Result<BuildReport, PipelineError> {
    let layout = Layout::new(run_dir);
    let models: Vec<ZpkModel> = load_models(&layout.models_dir())?.into_iter().map(|m| m.zpk).collect();
    let yss = load_steady_states(&layout.steady_states())?;
    let (schedule, tracked) =
        fit_schedules(&models, &yss, &cfg.schedule.options()).map_err(PipelineError::numeric)?;
    schedule.save(&layout.schedule())?;
    let r2 = &schedule.r2;
    let mut f = std::io::BufWriter::new(std::fs::File::create(layout.schedule_r2())?);
    writeln!(f, "curve,r2")?;
    for (name, v) in [("K", r2.k), ("P1", r2.p1), ("P2", r2.p2), ("Z1", r2.z1), ("Z2", r2.z2), ("y_ss", r2.y_ss)] {
        writeln!(f, "{name},{}", v.map(fmt_f64).unwrap_or_default())?;
    }
    f.flush()?;
    let rows: Vec<[f64; 10]> = (0..tracked.u_dc.len())
        .map(|i| {
            [
                tracked.u_dc[i],
                tracked.k[i],
                tracked.p1[i].re,
                tracked.p1[i].im,
                tracked.p2[i].re,
                tracked.p2[i].im,
                tracked.z1[i].re,
                tracked.z1[i].im,
                tracked.z2[i].re,
                tracked.z2[i].im,
            ]
        })
        .collect();
    write_csv(
        &layout.tracked(),
        &["u_dc", "K", "P1_re", "P1_im", "P2_re", "P2_im", "Z1_re", "Z1_im", "Z2_re", "Z2_im"],
        &rows,
    )?;
    Ok(BuildReport {
        schedule,
        tracked,
        artifacts: vec![layout.schedule(), layout.schedule_r2(), layout.tracked()],
    })
}

/// BDM record of one validation case.
#[derive(Debug, Clone)]
pub struct CaseTrace {
    pub name: String,
    pub f_hz: f64,
    pub u_dc: f64,
    pub sample_rate: f64,
    /// Whole input record from t = 0.
    pub u: Vec<f64>,
    /// First sample of the analysed final period.
    pub window_start: usize,
    pub window_len: usize,
    /// BDM fluorescence over the analysed window.
    pub y_bdm: Vec<f64>,
}

impl CaseTrace {
    pub fn window_times(&self) -> Vec<f64> {
        (self.window_start..self.window_start + self.window_len)
            .map(|i| i as f64 / self.sample_rate)
            .collect()
    }

    pub fn window_input(&self) -> &[f64] {
        &self.u[self.window_start..self.window_start + self.window_len]
    }
}

fn case_program(case: &CaseConfig) -> Result<(LightProgram, f64, f64), PipelineError> {
    match case {
        CaseConfig::Sine { u_dc, amplitude, frequency, .. } => Ok((
            LightProgram::Sine { u_dc: *u_dc, amplitude: *amplitude, frequency: *frequency, phase: 0.0 },
            1.0 / frequency,
            *frequency,
        )),
        CaseConfig::Multisine { name, u_dc, base_frequency, tones } => {
            let mut tones: Vec<_> = tones.iter().collect();
            tones.sort_by(|a, b| a.frequency.total_cmp(&b.frequency));
            let mut harmonics = Vec::with_capacity(tones.len());
            for t in &tones {
                let h = (t.frequency / base_frequency).round();
                if h < 1.0 || (h * base_frequency - t.frequency).abs() > 1e-9 * t.frequency {
                    return Err(PipelineError::Config(format!(
                        "case {name}: tone {} Hz is not a harmonic of {base_frequency} Hz",
                        t.frequency
                    )));
                }
                harmonics.push(h as u64);
            }
            let spec = MultisineSpec {
                u_dc: *u_dc,
                base_frequency: *base_frequency,
                harmonics,
                amplitudes: tones.iter().map(|t| t.amplitude).collect(),
                phases: tones.iter().map(|t| t.phase).collect(),
                rng_seed: None,
            };
            spec.validate().map_err(|e| PipelineError::Config(format!("case {name}: {e}")))?;
            Ok((LightProgram::tabulated(spec), 1.0 / base_frequency, *base_frequency))
        }
    }
}

/// Simulates the BDM for one case from its DC steady state and keeps the
/// final full period.
pub fn simulate_case(
    cfg: &ExperimentConfig,
    params: &BdmParameters,
    case: &CaseConfig,
) -> Result<CaseTrace, PipelineError> {
    let v = &cfg.validation;
    let (program, period, f_hz) = case_program(case)?;
    let duration = match case {
        CaseConfig::Sine { .. } => v.sine_duration,
        CaseConfig::Multisine { .. } => v.multisine_duration,
    };
    let f_max = program.max_frequency().unwrap_or(0.0);
    let factor = (v.samples_per_cycle * f_max / v.sample_rate).ceil().max(1.0);
    let fs = v.sample_rate * factor;
    let n = (period * fs).round() as usize;
    if n == 0 || ((n as f64) - period * fs).abs() > 1e-6 * period * fs {
        return Err(PipelineError::Config(format!(
            "case {}: period {period} s is not a whole number of samples at {fs} Hz",
            case.name()
        )));
    }
    if duration < period {
        return Err(PipelineError::Config(format!(
            "case {}: duration {duration} s is shorter than one period",
            case.name()
        )));
    }
    let trace = simulate(params, &program, None, (0.0, duration), fs, &simulation_options(cfg))
        .map_err(|e| PipelineError::Numeric(format!("case {}: {e}", case.name())))?;
    let last = trace.len() - 1;
    let start = last - n;
    let y = trace.chlf();
    Ok(CaseTrace {
        name: case.name().to_string(),
        f_hz,
        u_dc: case.u_dc(),
        sample_rate: fs,
        window_start: start,
        window_len: n,
        y_bdm: y[start..last].to_vec(),
        u: trace.u,
    })
}

#[derive(Debug, Clone)]
pub struct CaseEvaluation {
    pub y_lpv: Vec<f64>,
    pub r2: f64,
}

/// LPV response under frozen scheduling at the case DC level from zero
/// perturbation state.
pub fn evaluate_case(case: &CaseTrace, schedule: &LpvSchedule) -> Result<CaseEvaluation, PipelineError> {
    let out = lpv_simulate(
        schedule,
        &case.u,
        case.sample_rate,
        SchedulingPolicy::Frozen(case.u_dc),
        RangePolicy::Strict,
    )
    .map_err(|e| PipelineError::Numeric(format!("case {}: {e}", case.name)))?;
    let y_lpv = out.y[case.window_start..case.window_start + case.window_len].to_vec();
    let r2 = r_squared(&case.y_bdm, &y_lpv)
        .map_err(|e| PipelineError::Numeric(format!("case {}: {e}", case.name)))?;
    Ok(CaseEvaluation { y_lpv, r2 })
}

pub fn simulate_cases(cfg: &ExperimentConfig) -> Result<Vec<Result<CaseTrace, PipelineError>>, PipelineError> {
    let params = cfg.parameters()?;
    Ok(cfg
        .validation
        .cases
        .par_iter()
        .map(|c| simulate_case(cfg, &params, c))
        .collect())
}

#[derive(Debug)]
pub struct CaseOutcome {
    pub name: String,
    pub f_hz: f64,
    pub u_dc: f64,
    pub r2: Result<f64, PipelineError>,
}

#[derive(Debug)]
pub struct ValidationReport {
    pub label: String,
    pub cases: Vec<CaseOutcome>,
    pub artifacts: Vec<PathBuf>,
}

impl ValidationReport {
    pub fn failures(&self) -> Vec<String> {
        self.cases
            .iter()
            .filter_map(|c| c.r2.as_ref().err().map(|e| format!("{}: {e}", c.name)))
            .collect()
    }

    pub fn r2(&self, name: &str) -> Option<f64> {
        self.cases.iter().find(|c| c.name == name).and_then(|c| c.r2.as_ref().ok().copied())
    }
}

/// Scores `schedule` on simulated cases and writes one CSV per case plus a
/// summary under `validation/<label>/`.
pub fn validate_traces(
    cfg: &ExperimentConfig,
    traces: &[Result<CaseTrace, PipelineError>],
    schedule: &LpvSchedule,
    out: &Path,
    label: &str,
) -> Result<ValidationReport, PipelineError> {
    let dir = Layout::new(out).validation_dir(label);
    std::fs::create_dir_all(&dir)?;
    let evaluations: Vec<Result<CaseEvaluation, PipelineError>> = traces
        .par_iter()
        .map(|t| match t {
            Ok(t) => evaluate_case(t, schedule),
            Err(e) => Err(PipelineError::Numeric(e.to_string())),
        })
        .collect();
    let mut artifacts = Vec::new();
    let mut cases = Vec::new();
    for ((case, trace), eval) in cfg.validation.cases.iter().zip(traces).zip(evaluations) {
        let (f_hz, u_dc) = match trace {
            Ok(t) => (t.f_hz, t.u_dc),
            Err(_) => (f64::NAN, case.u_dc()),
        };
        if let (Ok(t), Ok(e)) = (trace, &eval) {
            let times = t.window_times();
            let rows = (0..t.window_len).map(|i| [times[i], t.window_input()[i], t.y_bdm[i], e.y_lpv[i]]);
            let path = dir.join(format!("{}.csv", t.name));
            write_csv(&path, &["t", "u", "y_bdm", "y_lpv"], rows)?;
            artifacts.push(path);
        }
        cases.push(CaseOutcome { name: case.name().to_string(), f_hz, u_dc, r2: eval.map(|e| e.r2) });
    }
    let path = dir.join("summary.csv");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
    writeln!(f, "case,f_hz,u_dc,r2")?;
    for c in &cases {
        let r2 = c.r2.as_ref().map(|v| fmt_f64(*v)).unwrap_or_default();
        writeln!(f, "{},{},{},{r2}", c.name, fmt_f64(c.f_hz), fmt_f64(c.u_dc))?;
    }
    f.flush()?;
    artifacts.push(path);
    Ok(ValidationReport { label: label.to_string(), cases, artifacts })
}

pub fn validate(
    cfg: &ExperimentConfig,
    schedule: &LpvSchedule,
    out: &Path,
    label: &str,
) -> Result<ValidationReport, PipelineError> {
    let traces = simulate_cases(cfg)?;
    validate_traces(cfg, &traces, schedule, out, label)
}
