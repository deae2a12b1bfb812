//! Experiment dispatch, result files and run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rydberg_core::experiments::{add_projection_noise, find_peaks, fit_lorentzian, ExperimentResult, Simulator};
use rydberg_core::inference::{fit_fringe_least_squares, sample, summarize, BinomialData, FitModel};
use rydberg_core::lindblad::{build_model, evolve_with, EvolveOptions, Level};
use rydberg_core::tomography::{
    bootstrap_errors, process_fidelity, reconstruct_process, simulate_tomography, ProcessMatrix, INPUT_LABELS,
};
use rydberg_core::{pulses, SystemParams};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::{ConfigError, ExperimentKind, OutputFormat, RawConfig, RunConfig};

/// Trajectory rows are thinned to about this many samples.
const TRAJECTORY_ROWS: usize = 400;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
    #[error("bad manifest {path}: {msg}")]
    Manifest { path: PathBuf, msg: String },
}

impl RunError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) | Self::Manifest { .. } => 2,
            Self::Numerical(_) => 3,
            Self::Io { .. } => 1,
        }
    }
}

fn numerical(e: impl std::fmt::Display) -> RunError {
    RunError::Numerical(e.to_string())
}

fn io_err(context: impl Into<String>) -> impl FnOnce(io::Error) -> RunError {
    let context = context.into();
    move |source| RunError::Io { context, source }
}

/// A named result table rendered as CSV text.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    /// Appended to the run stem, empty for the main result.
    pub suffix: String,
    pub csv: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub tables: Vec<Table>,
    pub summary: BTreeMap<String, Value>,
}

fn render(write: impl FnOnce(&mut Vec<u8>) -> io::Result<()>) -> String {
    let mut buf = Vec::new();
    write(&mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv is utf-8")
}

fn simulator(cfg: &RunConfig) -> Simulator {
    Simulator { dt: cfg.dt, ramsey_angle_error: cfg.ramsey_angle_error }
}

fn trajectory_table(cfg: &RunConfig, seq: &pulses::PulseSequence) -> Result<String, RunError> {
    let model = build_model(&cfg.system, 5).map_err(numerical)?;
    let rho0 = model.ket_state(Level::Zero).expect("five-level model has |0>");
    let steps = (seq.total_duration / cfg.dt).ceil() as usize;
    let opts = EvolveOptions { dt: cfg.dt, stride: (steps / TRAJECTORY_ROWS).max(1) };
    let traj = evolve_with(&model, seq, &rho0, &opts).map_err(numerical)?;
    Ok(render(|w| traj.write_csv(w)))
}

fn with_noise(cfg: &RunConfig, result: ExperimentResult) -> Result<ExperimentResult, RunError> {
    match (cfg.noise, cfg.seed) {
        (true, Some(seed)) => add_projection_noise(&result, cfg.shots, seed).map_err(numerical),
        _ => Ok(ExperimentResult { shots: cfg.shots, ..result }),
    }
}

fn notes(summary: &mut BTreeMap<String, Value>, result: &ExperimentResult) {
    if !result.notes.is_empty() {
        summary.insert("notes".into(), json!(result.notes));
    }
}

/// Runs the configured experiment without touching the filesystem.
pub fn execute(cfg: &RunConfig) -> Result<RunOutput, RunError> {
    let sim = simulator(cfg);
    let p = &cfg.system;
    let mut summary = BTreeMap::new();
    let mut tables = Vec::new();
    let main = |csv: String| Table { suffix: String::new(), csv };
    match cfg.experiment {
        ExperimentKind::StirapSingle => {
            let eff = sim.single_stirap(p, cfg.t_rise).map_err(numerical)?;
            summary.insert("efficiency".into(), json!(eff));
            let seq = pulses::single_stirap(p, cfg.t_rise).map_err(numerical)?;
            tables.push(main(trajectory_table(cfg, &seq)?));
        }
        ExperimentKind::StirapDouble => {
            let p0 = sim.double_stirap(p, cfg.t_rise, cfg.wait, cfg.phi).map_err(numerical)?;
            summary.insert("return_probability".into(), json!(p0));
            let seq = pulses::double_stirap(p, cfg.t_rise, cfg.wait, cfg.phi).map_err(numerical)?;
            tables.push(main(trajectory_table(cfg, &seq)?));
        }
        ExperimentKind::PhaseScan => {
            let phis = cfg.scan.as_ref().expect("validated").values();
            let result = with_noise(cfg, sim.phase_scan(p, cfg.t_rise, cfg.wait, &phis).map_err(numerical)?)?;
            let fit = fit_fringe_least_squares(&result.x, &result.observed())
                .ok_or_else(|| RunError::Numerical("fringe fit is degenerate".into()))?;
            summary.insert("contrast".into(), json!(fit.contrast));
            summary.insert("center".into(), json!(fit.center));
            summary.insert("phi_dyn_deg".into(), json!(fit.phi_dyn.to_degrees()));
            tables.push(main(render(|w| result.write_csv(w))));
        }
        ExperimentKind::LifetimeFit => {
            let waits = cfg.scan.as_ref().expect("validated").values();
            let seed = cfg.seed.expect("validated");
            let clean = sim.lifetime_scan(p, cfg.t_rise, &waits).map_err(numerical)?;
            let data = add_projection_noise(&clean, cfg.shots, seed).map_err(numerical)?;
            let model = if cfg.fit.floor {
                let base = FitModel::lifetime_default();
                FitModel::exp_decay_with_floor(base.bounds[0], base.bounds[1], (0.0, 1.0))
            } else {
                FitModel::lifetime_default()
            };
            let binomial = BinomialData::try_from(&data).map_err(numerical)?;
            let chain = sample(&model, &binomial, cfg.fit.walkers, cfg.fit.steps, seed).map_err(numerical)?;
            let stats = summarize(&chain, cfg.fit.burn_in).map_err(numerical)?;
            for (name, q) in model.names().into_iter().zip(&stats) {
                summary.insert(name.to_string(), json!({ "p16": q.p16, "p50": q.p50, "p84": q.p84 }));
            }
            summary.insert("acceptance_fraction".into(), json!(chain.acceptance_fraction()));
            tables.push(main(render(|w| data.write_csv(w))));
            tables.push(Table { suffix: "-chain".into(), csv: render(|w| chain.write_csv(w)) });
        }
        ExperimentKind::AutlerTownes => {
            let dps = cfg.scan.as_ref().expect("validated").values();
            let clean = sim.absorption_scan(p, &dps, cfg.t_ex).map_err(numerical)?;
            notes(&mut summary, &clean);
            let result = with_noise(cfg, clean)?;
            let observed = result.observed();
            let peaks: Vec<f64> = find_peaks(&result.x, &observed).into_iter().take(2).map(|pk| pk.0).collect();
            if let [a, b] = peaks[..] {
                summary.insert("splitting_MHz".into(), json!((a - b).abs()));
            }
            summary.insert("peaks_MHz".into(), json!(peaks));
            if p.omega_s == 0.0 {
                let rates: Vec<f64> = observed.iter().map(|&v| -(-v).ln_1p() / cfg.t_ex).collect();
                if let Some(l) = fit_lorentzian(&result.x, &rates, 0.05) {
                    summary.insert("lorentzian_fwhm_MHz".into(), json!(l.fwhm));
                    summary.insert("lorentzian_center_MHz".into(), json!(l.center));
                }
            }
            tables.push(main(render(|w| result.write_csv(w))));
        }
        ExperimentKind::AvoidedCrossing => {
            let dps = cfg.scan.as_ref().expect("validated").values();
            let dss = cfg.scan2.as_ref().expect("validated").values();
            let map = sim.avoided_crossing(p, &dps, &dss, cfg.t_ex).map_err(numerical)?;
            summary.insert("omega_s_MHz".into(), json!(map.omega_s_mhz));
            summary.insert("ridges_MHz".into(), json!(map.ridges()));
            tables.push(main(render(|w| map.write_csv(w))));
        }
        ExperimentKind::Tomography => {
            let seed = cfg.seed.expect("validated");
            let data = simulate_tomography(&sim, p, cfg.t_rise, cfg.shots, seed).map_err(numerical)?;
            let chi = reconstruct_process(&data).map_err(numerical)?;
            let ideal = ProcessMatrix::sigma_z();
            summary.insert("fidelity".into(), json!(process_fidelity(&chi, &ideal)));
            let counts: BTreeMap<&str, _> = INPUT_LABELS.iter().copied().zip(data.counts.iter()).collect();
            summary.insert("counts".into(), json!(counts));
            if cfg.bootstrap > 0 {
                let ci = bootstrap_errors(&data, &ideal, cfg.bootstrap, seed).map_err(numerical)?;
                summary.insert("fidelity_bootstrap".into(), json!(ci));
            }
            tables.push(main(chi_table(&chi)));
        }
    }
    Ok(RunOutput { tables, summary })
}

fn chi_table(chi: &ProcessMatrix) -> String {
    let mut s = String::from("row,col,re_chi,im_chi\n");
    for m in 0..4 {
        for n in 0..4 {
            let v = chi.element(m, n);
            s.push_str(&format!("{m},{n},{},{}\n", v.re, v.im));
        }
    }
    s
}

/// Converts CSV text to `{"columns": [...], "rows": [[...]]}` with numeric
/// cells as numbers and empty cells as null.
pub fn csv_to_json(csv: &str) -> Value {
    let mut lines = csv.lines();
    let columns: Vec<&str> = lines.next().map(|h| h.split(',').collect()).unwrap_or_default();
    let rows: Vec<Value> = lines
        .map(|line| {
            Value::Array(
                line.split(',')
                    .map(|cell| match cell.parse::<f64>() {
                        _ if cell.is_empty() => Value::Null,
                        Ok(v) if v.is_finite() => json!(v),
                        _ => json!(cell),
                    })
                    .collect(),
            )
        })
        .collect();
    json!({ "columns": columns, "rows": rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub experiment: String,
    pub created: String,
    pub seed: Option<u64>,
    pub dt_us: f64,
    /// Every effective setting in configuration units.
    pub settings: BTreeMap<String, String>,
    /// System parameters in rad/μs, for reference only.
    pub params: SystemParams,
    pub outputs: Vec<String>,
    pub summary: BTreeMap<String, Value>,
}

/// Where a finished run put its files.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub outputs: Vec<PathBuf>,
    pub manifest: PathBuf,
    pub summary: BTreeMap<String, Value>,
}

fn unused_stem(dir: &Path, base: &str, tables: &[Table], ext: &str) -> String {
    let taken = |stem: &str| {
        dir.join(format!("{stem}.manifest.json")).exists()
            || tables.iter().any(|t| dir.join(format!("{stem}{}.{ext}", t.suffix)).exists())
    };
    if !taken(base) {
        return base.to_string();
    }
    (2..).map(|k| format!("{base}-{k}")).find(|s| !taken(s)).expect("unbounded")
}

/// Runs the configuration and writes `<experiment>-<timestamp>.<ext>` plus a
/// manifest into the output directory.
pub fn run_config(cfg: &RunConfig) -> Result<RunRecord, RunError> {
    let out = execute(cfg)?;
    let now = chrono::Utc::now();
    let ext = cfg.format.extension();
    fs::create_dir_all(&cfg.output).map_err(io_err(format!("creating {}", cfg.output.display())))?;
    let base = format!("{}-{}", cfg.experiment, now.format("%Y%m%dT%H%M%SZ"));
    let stem = unused_stem(&cfg.output, &base, &out.tables, ext);

    let mut outputs = Vec::new();
    for table in &out.tables {
        let path = cfg.output.join(format!("{stem}{}.{ext}", table.suffix));
        let body = match cfg.format {
            OutputFormat::Csv => table.csv.clone(),
            OutputFormat::Json => {
                let mut s = serde_json::to_string_pretty(&csv_to_json(&table.csv)).expect("json");
                s.push('\n');
                s
            }
        };
        fs::write(&path, body).map_err(io_err(format!("writing {}", path.display())))?;
        outputs.push(path);
    }

    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        experiment: cfg.experiment.to_string(),
        created: now.to_rfc3339(),
        seed: cfg.seed,
        dt_us: cfg.dt,
        settings: cfg.settings.clone(),
        params: cfg.system.clone(),
        outputs: outputs.iter().filter_map(|p| p.file_name()).map(|n| n.to_string_lossy().into_owned()).collect(),
        summary: out.summary.clone(),
    };
    let manifest_path = cfg.output.join(format!("{stem}.manifest.json"));
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, text + "\n").map_err(io_err(format!("writing {}", manifest_path.display())))?;
    Ok(RunRecord { outputs, manifest: manifest_path, summary: out.summary })
}

/// Loads a config file, applies `key=value` overrides and resolves it.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let mut raw = RawConfig::load(path)?;
    for o in overrides {
        raw.set(o)?;
    }
    raw.resolve()
}

/// Rebuilds the configuration recorded in a manifest; `out` replaces the
/// recorded output directory.
pub fn load_manifest(path: &Path, out: Option<&Path>) -> Result<RunConfig, RunError> {
    let text = fs::read_to_string(path).map_err(io_err(format!("reading {}", path.display())))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| RunError::Manifest { path: path.to_path_buf(), msg: e.to_string() })?;
    let mut settings = manifest.settings;
    if let Some(dir) = out {
        settings.insert("run.output".into(), dir.display().to_string());
    }
    Ok(RawConfig::from_settings(&settings, &path.display().to_string())?.resolve()?)
}
