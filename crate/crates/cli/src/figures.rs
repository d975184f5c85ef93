//! CSV bundles, one file per figure panel, built from the artifacts of a
//! run directory.
//!
//! | file | columns |
//! |------|---------|
//! | `fig01_light.csv` | `t,u` one period of the first excitation |
//! | `fig01_spectrum.csv` | `f_hz,amplitude` |
//! | `fig02_frf.csv` | `f_hz,frf_db,nl_db` |
//! | `fig02_output_residual.csv` | `f_hz,residual_db` non-excited bins |
//! | `fig03_ls.csv`, `fig04_wls.csv` | `f_hz,frf_db,model_db,frf_phase_deg,model_phase_deg` |
//! | `fig05_u<u>.csv` | `f_hz,frf_db,model_db` for u in 200, 400, 600, 1000 |
//! | `fig06_gain.csv` | `u_dc,K,K_schedule` |
//! | `fig07_poles_zeros.csv` | `u_dc,P1,P2,Z1,Z2,P1_schedule,P2_schedule,Z1_schedule,Z2_schedule` |
//! | `fig08_steady_state.csv` | `u_dc,y_ss,y_ss_schedule` |
//! | `fig09_<case>.csv`, `fig10_<case>.csv` | `t,u,y_bdm,y_lpv` sine cases by DC level |
//! | `fig11_light_<slice>.csv` | `t,u` multisine input |
//! | `fig12_output_<slice>.csv` | `t,y_bdm,y_lpv` |
//!
//! Slices are `period`, `100s`, `10s` and `1s`, each ending at the last
//! sample.

use std::path::{Path, PathBuf};

use photosid::excitation::{render, MultisineSpec};
use photosid::io::{read_csv, write_csv};
use photosid::lpv::LpvSchedule;
use photosid::spectral::FrfEstimate;
use photosid::tf::{ModelRecord, RationalTf};

use crate::config::{CaseConfig, ExperimentConfig};
use crate::pipeline::{fit_point, Layout};
use crate::PipelineError;

pub const BODE_LEVELS: [f64; 4] = [200.0, 400.0, 600.0, 1000.0];
/// Figure of the separation and fit comparisons.
pub const FRF_LEVEL: f64 = 100.0;

fn require(path: PathBuf) -> Result<PathBuf, PipelineError> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(PipelineError::MissingArtifact(path))
    }
}

fn db(x: f64) -> f64 {
    20.0 * x.log10()
}

fn load_frf(cfg: &ExperimentConfig, layout: &Layout, u: f64) -> Result<FrfEstimate, PipelineError> {
    let path = require(layout.frf(u))?;
    FrfEstimate::read_csv(&path, cfg.multisine.realizations, cfg.multisine.periods)
        .map_err(|e| PipelineError::Numeric(format!("{}: {e}", path.display())))
}

fn model_rows(frf: &FrfEstimate, tf: &RationalTf) -> Vec<[f64; 5]> {
    frf.excited_points()
        .iter()
        .map(|p| {
            let m = tf.eval_hz(p.freq);
            [p.freq, db(p.g.norm()), db(m.norm()), p.g.arg().to_degrees(), m.arg().to_degrees()]
        })
        .collect()
}

fn write_slices(
    dir: &Path,
    stem: &str,
    header: &[&str],
    rows: &[Vec<f64>],
    period: f64,
) -> Result<Vec<PathBuf>, PipelineError> {
    let mut out = Vec::new();
    let end = rows.last().map_or(0.0, |r| r[0]);
    for (tag, span) in [("period", period), ("100s", 100.0), ("10s", 10.0), ("1s", 1.0)] {
        let t0 = end - span;
        let path = dir.join(format!("{stem}_{tag}.csv"));
        write_csv(&path, header, rows.iter().filter(|r| r[0] > t0 - 1e-9))?;
        out.push(path);
    }
    Ok(out)
}

pub fn figures(cfg: &ExperimentConfig, run_dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let layout = Layout::new(run_dir);
    let dir = layout.figures_dir();
    std::fs::create_dir_all(&dir)?;
    let mut written = Vec::new();
    let grid = cfg.grid.points();
    let frf_level = grid
        .iter()
        .copied()
        .min_by(|a, b| (a - FRF_LEVEL).abs().total_cmp(&(b - FRF_LEVEL).abs()))
        .ok_or_else(|| PipelineError::Config("empty grid".into()))?;

    let spec_path = require(layout.excitation(frf_level, 0))?;
    let spec = MultisineSpec::load(&spec_path).map_err(PipelineError::numeric)?;
    let signal = render(&spec, cfg.multisine.sample_rate, 1).map_err(PipelineError::numeric)?;
    let times: Vec<f64> = signal.times().collect();
    let path = dir.join("fig01_light.csv");
    write_csv(&path, &["t", "u"], times.iter().zip(&signal.samples).map(|(t, u)| [*t, *u]))?;
    written.push(path);
    let path = dir.join("fig01_spectrum.csv");
    let tones = spec.tone_frequencies();
    write_csv(&path, &["f_hz", "amplitude"], tones.iter().zip(&spec.amplitudes).map(|(f, a)| [*f, *a]))?;
    written.push(path);

    let frf = load_frf(cfg, &layout, frf_level)?;
    let m = cfg.multisine.realizations as f64;
    let path = dir.join("fig02_frf.csv");
    let rows = frf
        .excited_points()
        .iter()
        .map(|p| [p.freq, db(p.g.norm()), 10.0 * (m * p.sigma2_total).log10()])
        .collect::<Vec<_>>();
    write_csv(&path, &["f_hz", "frf_db", "nl_db"], &rows)?;
    written.push(path);
    let path = dir.join("fig02_output_residual.csv");
    let rows = (1..frf.excited.len())
        .filter(|&k| !frf.excited[k])
        .map(|k| [frf.freq(k), 10.0 * frf.residual[k].log10()])
        .collect::<Vec<_>>();
    write_csv(&path, &["f_hz", "residual_db"], &rows)?;
    written.push(path);

    let (ls, wls, _, _) = fit_point(cfg, frf_level, &frf)?;
    let header = ["f_hz", "frf_db", "model_db", "frf_phase_deg", "model_phase_deg"];
    for (name, fit) in [("fig03_ls.csv", &ls), ("fig04_wls.csv", &wls)] {
        let path = dir.join(name);
        write_csv(&path, &header, &model_rows(&frf, &fit.tf))?;
        written.push(path);
    }

    for u in BODE_LEVELS {
        let frf = load_frf(cfg, &layout, u)?;
        let rec = ModelRecord::load(&require(layout.model(u))?).map_err(PipelineError::numeric)?;
        let rows: Vec<[f64; 3]> = model_rows(&frf, &rec.tf).iter().map(|r| [r[0], r[1], r[2]]).collect();
        let path = dir.join(format!("fig05_u{u}.csv"));
        write_csv(&path, &["f_hz", "frf_db", "model_db"], &rows)?;
        written.push(path);
    }

    let schedule = LpvSchedule::load(&require(layout.schedule())?).map_err(PipelineError::numeric)?;
    let (_, tracked) = read_csv(&require(layout.tracked())?)?;
    let path = dir.join("fig06_gain.csv");
    write_csv(&path, &["u_dc", "K", "K_schedule"], tracked.iter().map(|r| [r[0], r[1], schedule.k.eval(r[0])]))?;
    written.push(path);
    let path = dir.join("fig07_poles_zeros.csv");
    let rows = tracked.iter().map(|r| {
        let u = r[0];
        [u, r[2], r[4], r[6], r[8], schedule.p1.eval(u), schedule.p2.eval(u), schedule.z1.eval(u), schedule.z2.eval(u)]
    });
    write_csv(
        &path,
        &["u_dc", "P1", "P2", "Z1", "Z2", "P1_schedule", "P2_schedule", "Z1_schedule", "Z2_schedule"],
        rows,
    )?;
    written.push(path);
    let (_, yss) = read_csv(&require(layout.steady_states())?)?;
    let path = dir.join("fig08_steady_state.csv");
    write_csv(&path, &["u_dc", "y_ss", "y_ss_schedule"], yss.iter().map(|r| [r[0], r[1], schedule.y_ss.eval(r[0])]))?;
    written.push(path);

    let vdir = layout.validation_dir("built");
    let mut sine_levels: Vec<f64> = cfg
        .validation
        .cases
        .iter()
        .filter_map(|c| matches!(c, CaseConfig::Sine { .. }).then(|| c.u_dc()))
        .collect();
    sine_levels.sort_by(f64::total_cmp);
    sine_levels.dedup();
    for case in &cfg.validation.cases {
        let src = require(vdir.join(format!("{}.csv", case.name())))?;
        let (_, rows) = read_csv(&src)?;
        match case {
            CaseConfig::Sine { u_dc, .. } => {
                let fig = 9 + sine_levels.iter().position(|u| u == u_dc).unwrap_or(0);
                let path = dir.join(format!("fig{fig:02}_{}.csv", case.name()));
                write_csv(&path, &["t", "u", "y_bdm", "y_lpv"], &rows)?;
                written.push(path);
            }
            CaseConfig::Multisine { base_frequency, .. } => {
                let period = 1.0 / base_frequency;
                let light: Vec<Vec<f64>> = rows.iter().map(|r| vec![r[0], r[1]]).collect();
                written.extend(write_slices(&dir, "fig11_light", &["t", "u"], &light, period)?);
                let out: Vec<Vec<f64>> = rows.iter().map(|r| vec![r[0], r[2], r[3]]).collect();
                written.extend(write_slices(&dir, "fig12_output", &["t", "y_bdm", "y_lpv"], &out, period)?);
            }
        }
    }
    Ok(written)
}
