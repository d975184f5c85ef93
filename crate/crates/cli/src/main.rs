use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use photosid::bdm::{simulate, LightProgram};
use photosid::excitation::MultisineSpec;
use photosid::lpv::LpvSchedule;
use photosid_cli::config::{ExperimentConfig, GridConfig};
use photosid_cli::figures::figures;
use photosid_cli::manifest::RunManifest;
use photosid_cli::pipeline::{self, simulation_options, Layout};
use photosid_cli::PipelineError;

#[derive(Parser)]
#[command(name = "photosid", version, about = "BDM fluorescence identification pipeline")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration; the bundled desk-scale config when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory; overrides `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// DC grid as min:step:max.
    #[arg(long, global = true)]
    grid: Option<String>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the BDM under constant, sine or multisine light.
    Simulate {
        #[arg(long)]
        u_dc: Option<f64>,
        #[arg(long, default_value_t = 0.0)]
        amplitude: f64,
        #[arg(long)]
        frequency: Option<f64>,
        /// Multisine design file; takes precedence over the sine flags.
        #[arg(long)]
        multisine: Option<PathBuf>,
        #[arg(long, default_value_t = 1000.0)]
        duration: f64,
        #[arg(long)]
        sample_rate: Option<f64>,
    },
    /// Design the multisine realizations of every grid point.
    Excite,
    /// Simulate realizations and estimate the BLA of every grid point.
    Frf,
    /// Fit local models to the FRF files of a run.
    Fit,
    /// Excite, estimate and fit at every grid point, plus steady states.
    Identify,
    /// Fit the LPV schedule from the models of a run.
    LpvBuild,
    /// Compare BDM and LPV responses on the validation cases.
    Validate {
        /// Schedule file; the run's `schedule.toml` when omitted.
        #[arg(long, conflicts_with = "published")]
        schedule: Option<PathBuf>,
        /// Use the published schedule coefficients.
        #[arg(long)]
        published: bool,
    },
    /// Write CSV bundles for every figure.
    Figures,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Excite => "excite",
            Command::Frf => "frf",
            Command::Fit => "fit",
            Command::Identify => "identify",
            Command::LpvBuild => "lpv-build",
            Command::Validate { .. } => "validate",
            Command::Figures => "figures",
        }
    }
}

fn load_config(c: &Common) -> Result<ExperimentConfig, PipelineError> {
    let mut cfg = match &c.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::desk(),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &c.out {
        cfg.output_dir = out.clone();
    }
    if let Some(g) = &c.grid {
        cfg.grid = GridConfig::parse(g)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn partial(what: &'static str, failures: &[String], total: usize) -> Result<(), PipelineError> {
    for f in failures {
        eprintln!("failed: {f}");
    }
    if failures.is_empty() {
        Ok(())
    } else if failures.len() >= total {
        Err(PipelineError::Numeric(format!("every {what} failed")))
    } else {
        Err(PipelineError::Partial { what, failed: failures.len(), total })
    }
}

fn validate_label(schedule: &Option<PathBuf>, published: bool) -> String {
    match (published, schedule) {
        (true, _) => "published".into(),
        (false, Some(path)) => path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "custom".into()),
        (false, None) => "built".into(),
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let cfg = load_config(&cli.common)?;
    if let Some(jobs) = cli.common.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
    }
    if let Some(w) = &cfg.warning {
        eprintln!("warning: {w}");
    }
    let out = cfg.output_dir.clone();
    std::fs::create_dir_all(&out)?;
    let config_path = out.join("config.toml");
    std::fs::write(&config_path, cfg.to_config_string())?;
    let manifest_name = match &cli.command {
        Command::Validate { schedule, published } => format!("validate_{}", validate_label(schedule, *published)),
        c => c.name().to_string(),
    };
    let mut manifest = RunManifest::new(&manifest_name, &cfg);
    manifest.record(&out, &config_path)?;

    let outcome = match &cli.command {
        Command::Simulate { u_dc, amplitude, frequency, multisine, duration, sample_rate } => {
            let params = cfg.parameters()?;
            let program = match (multisine, frequency) {
                (Some(path), _) => LightProgram::tabulated(MultisineSpec::load(path).map_err(|e| PipelineError::Config(e.to_string()))?),
                (None, Some(f)) => LightProgram::Sine {
                    u_dc: u_dc.unwrap_or(cfg.grid.min),
                    amplitude: *amplitude,
                    frequency: *f,
                    phase: 0.0,
                },
                (None, None) => LightProgram::Constant(u_dc.unwrap_or(cfg.grid.min)),
            };
            let fs = sample_rate.unwrap_or(cfg.multisine.sample_rate);
            let trace = manifest.time("simulate", || {
                simulate(&params, &program, None, (0.0, *duration), fs, &simulation_options(&cfg))
            });
            let trace = trace.map_err(|e| PipelineError::Numeric(e.to_string()))?;
            for w in &trace.meta.warnings {
                eprintln!("warning: {w}");
            }
            let path = out.join("simulate.csv");
            trace.write_csv(&path)?;
            manifest.record(&out, &path)?;
            Ok(())
        }
        Command::Excite | Command::Frf | Command::Fit => {
            let report = manifest.time(cli.command.name(), || match cli.command {
                Command::Excite => pipeline::excite_stage(&cfg, &out),
                Command::Frf => pipeline::frf_stage(&cfg, &out),
                _ => pipeline::fit_stage(&cfg, &out),
            })?;
            manifest.record_all(&out, &report.artifacts)?;
            manifest.failures = report.failures.clone();
            partial("grid points", &report.failures, report.total)
        }
        Command::Identify => {
            let report = manifest.time("identify", || pipeline::identify(&cfg, &out))?;
            manifest.record_all(&out, &report.artifacts)?;
            manifest.failures = report.failures();
            for p in &report.points {
                if let Ok(r) = &p.result {
                    println!(
                        "u_dc={:<7} separation={:6.1} dB  wls error={:6.3} dB  reflected={}",
                        p.u_dc,
                        r.separation_median_db,
                        r.magnitude_error_db,
                        r.reflected()
                    );
                }
            }
            partial("grid points", &manifest.failures, report.points.len())
        }
        Command::LpvBuild => {
            let report = manifest.time("lpv-build", || pipeline::lpv_build(&cfg, &out))?;
            manifest.record_all(&out, &report.artifacts)?;
            let r2 = &report.schedule.r2;
            println!(
                "R^2  K={:?} P1={:?} P2={:?} Z1={:?} Z2={:?} y_ss={:?}",
                r2.k, r2.p1, r2.p2, r2.z1, r2.z2, r2.y_ss
            );
            Ok(())
        }
        Command::Validate { schedule, published } => {
            let (sched, label) = if *published {
                (LpvSchedule::published(), "published".to_string())
            } else {
                let path = schedule.clone().unwrap_or_else(|| Layout::new(&out).schedule());
                if !path.is_file() {
                    return Err(PipelineError::MissingArtifact(path));
                }
                let label = validate_label(schedule, false);
                (LpvSchedule::load(&path).map_err(|e| PipelineError::Config(e.to_string()))?, label)
            };
            let report = manifest.time("validate", || pipeline::validate(&cfg, &sched, &out, &label))?;
            manifest.record_all(&out, &report.artifacts)?;
            for c in &report.cases {
                match &c.r2 {
                    Ok(r2) => println!("{:<16} f={:<8} u_dc={:<6} R^2={r2:.4}", c.name, c.f_hz, c.u_dc),
                    Err(_) => println!("{:<16} failed", c.name),
                }
            }
            manifest.failures = report.failures();
            partial("cases", &manifest.failures, report.cases.len())
        }
        Command::Figures => {
            let files = manifest.time("figures", || figures(&cfg, &out))?;
            manifest.record_all(&out, &files)?;
            Ok(())
        }
    };
    let path = manifest.save(&out)?;
    eprintln!("manifest: {}", path.display());
    outcome
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
