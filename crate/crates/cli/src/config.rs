//! Flat `key = value` run configuration.
//!
//! Keys carry dotted section names (`system.omega_p`); a `[system]` line
//! sets the prefix for the keys that follow. `#` starts a comment.
//! Frequencies are given in MHz, times in μs and angles in degrees, and are
//! converted to rad/μs, μs and rad on load.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rydberg_core::{mhz, SystemParams};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{at}: {msg}")]
    Invalid { at: String, msg: String },
    #[error("missing required key `{0}`")]
    Missing(String),
}

fn invalid(at: impl Into<String>, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { at: at.into(), msg: msg.into() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExperimentKind {
    StirapSingle,
    StirapDouble,
    PhaseScan,
    LifetimeFit,
    AutlerTownes,
    AvoidedCrossing,
    Tomography,
}

impl ExperimentKind {
    pub const ALL: [Self; 7] = [
        Self::StirapSingle,
        Self::StirapDouble,
        Self::PhaseScan,
        Self::LifetimeFit,
        Self::AutlerTownes,
        Self::AvoidedCrossing,
        Self::Tomography,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::StirapSingle => "stirap-single",
            Self::StirapDouble => "stirap-double",
            Self::PhaseScan => "phase-scan",
            Self::LifetimeFit => "lifetime-fit",
            Self::AutlerTownes => "autler-townes",
            Self::AvoidedCrossing => "avoided-crossing",
            Self::Tomography => "tomography",
        }
    }

    /// Unit and meaning of the `scan` axis, if the experiment has one.
    fn scan_axis(self) -> Option<&'static str> {
        match self {
            Self::PhaseScan => Some("Stokes phase in degrees"),
            Self::LifetimeFit => Some("wait in us"),
            Self::AutlerTownes | Self::AvoidedCrossing => Some("pump detuning in MHz"),
            _ => None,
        }
    }

    fn needs_seed(self, noise: bool) -> bool {
        matches!(self, Self::LifetimeFit | Self::Tomography) || (noise && self.scan_axis().is_some())
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(|k| k.name()).collect();
            format!("unknown experiment `{s}`, expected one of {}", names.join(", "))
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl OutputFormat {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Csv => "csv",
            Self::Json => "json",
        }
    }
}

impl FromStr for OutputFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            _ => Err(format!("unknown format `{s}`, expected csv or json")),
        }
    }
}

/// Evenly spaced axis including both ends, in internal units.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanAxis {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl ScanAxis {
    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.start];
        }
        let step = (self.stop - self.start) / (self.points - 1) as f64;
        (0..self.points).map(|k| self.start + step * k as f64).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitSettings {
    pub walkers: usize,
    pub steps: usize,
    pub burn_in: usize,
    pub floor: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub system: SystemParams,
    pub experiment: ExperimentKind,
    pub t_rise: f64,
    pub wait: f64,
    pub phi: f64,
    pub t_ex: f64,
    pub scan: Option<ScanAxis>,
    pub scan2: Option<ScanAxis>,
    pub shots: u64,
    pub seed: Option<u64>,
    pub dt: f64,
    pub noise: bool,
    pub output: PathBuf,
    pub format: OutputFormat,
    pub fit: FitSettings,
    pub bootstrap: usize,
    pub ramsey_angle_error: f64,
    /// Every effective setting in boundary units; reparsing it rebuilds
    /// this configuration exactly.
    pub settings: BTreeMap<String, String>,
}

/// Keys with their defaults in boundary units; `None` marks keys without one.
const KEYS: &[(&str, Option<&str>)] = &[
    ("system.omega_p", Some("47")),
    ("system.omega_s", Some("47")),
    ("system.delta_p", Some("0")),
    ("system.delta_s", Some("0")),
    ("system.phi", Some("0")),
    ("system.gamma_e", Some("4.5")),
    ("system.tau_r", Some("2.3")),
    ("system.laser_linewidth_p", Some("0.1")),
    ("system.laser_linewidth_s", Some("0.1")),
    ("system.branch_e_to_s_minus", Some("0.5")),
    ("system.branch_e_to_s_plus", Some("0.5")),
    ("system.branch_r_to_s_minus", Some("0.5")),
    ("system.branch_r_to_s_plus", Some("0.5")),
    ("system.branch_r_to_d", Some("0")),
    ("system.stark_1", Some("0")),
    ("experiment.kind", None),
    ("experiment.t_rise", Some("0.2")),
    ("experiment.wait", Some("0")),
    ("experiment.phi", Some("0")),
    ("experiment.t_ex", Some("2")),
    ("scan.start", None),
    ("scan.stop", None),
    ("scan.points", None),
    ("scan2.start", None),
    ("scan2.stop", None),
    ("scan2.points", None),
    ("run.shots", Some("50")),
    ("run.seed", None),
    ("run.dt", Some("1e-4")),
    ("run.noise", Some("false")),
    ("run.output", Some("results")),
    ("run.format", Some("csv")),
    ("fit.walkers", Some("32")),
    ("fit.steps", Some("2000")),
    ("fit.burn_in", Some("500")),
    ("fit.floor", Some("false")),
    ("tomography.bootstrap", Some("100")),
    ("ramsey.angle_error", Some("0")),
];

#[derive(Clone, Debug)]
struct Entry {
    value: String,
    origin: String,
}

/// Settings before typing, with the origin of each value for messages.
#[derive(Clone, Debug, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, Entry>,
}

impl RawConfig {
    pub fn parse(text: &str, source: &str) -> Result<Self, ConfigError> {
        let mut raw = Self::default();
        let mut section = String::new();
        for (n, line) in text.lines().enumerate() {
            let at = format!("{source}:{}", n + 1);
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .map(str::trim)
                    .filter(|s| !s.is_empty() && !s.contains(char::is_whitespace))
                    .ok_or_else(|| invalid(&at, format!("malformed section header `{line}`")))?;
                section = format!("{name}.");
                continue;
            }
            let (key, value) =
                line.split_once('=').ok_or_else(|| invalid(&at, format!("expected `key = value`, found `{line}`")))?;
            let key = key.trim();
            let key = if key.contains('.') || section.is_empty() { key.to_string() } else { format!("{section}{key}") };
            if raw.entries.contains_key(&key) {
                return Err(invalid(&at, format!("duplicate key `{key}`")));
            }
            raw.insert(&key, value.trim(), at)?;
        }
        Ok(raw)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn from_settings(settings: &BTreeMap<String, String>, source: &str) -> Result<Self, ConfigError> {
        let mut raw = Self::default();
        for (k, v) in settings {
            raw.insert(k, v, format!("{source}: {k}"))?;
        }
        Ok(raw)
    }

    /// Applies a `key=value` override on top of the file.
    pub fn set(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let at = format!("--set {assignment}");
        let (key, value) =
            assignment.split_once('=').ok_or_else(|| invalid(&at, "expected key=value"))?;
        self.insert(key.trim(), value.trim(), at)
    }

    fn insert(&mut self, key: &str, value: &str, origin: String) -> Result<(), ConfigError> {
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(invalid(origin, format!("unknown key `{key}`")));
        }
        if value.is_empty() {
            return Err(invalid(origin, format!("empty value for `{key}`")));
        }
        self.entries.insert(key.to_string(), Entry { value: value.to_string(), origin });
        Ok(())
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        let Some(entry) = self.entries.get(key) else {
            return Ok(KEYS
                .iter()
                .find(|(k, _)| *k == key)
                .and_then(|(_, d)| *d)
                .map(|d| d.parse().ok().expect("defaults parse")));
        };
        entry
            .value
            .parse()
            .map(Some)
            .map_err(|_| invalid(&entry.origin, format!("cannot parse `{}` for `{key}`", entry.value)))
    }

    fn require<T: FromStr>(&self, key: &str) -> Result<T, ConfigError> {
        self.get(key)?.ok_or_else(|| ConfigError::Missing(key.to_string()))
    }

    fn origin(&self, key: &str) -> String {
        self.entries.get(key).map_or_else(|| format!("default {key}"), |e| e.origin.clone())
    }

    fn check(&self, key: &str, ok: bool, what: &str) -> Result<(), ConfigError> {
        if ok {
            Ok(())
        } else {
            Err(invalid(self.origin(key), format!("`{key}` {what}")))
        }
    }

    fn axis(&self, prefix: &str, to_internal: fn(f64) -> f64) -> Result<ScanAxis, ConfigError> {
        let start: f64 = self.require(&format!("{prefix}.start"))?;
        let stop: f64 = self.require(&format!("{prefix}.stop"))?;
        let points: usize = self.require(&format!("{prefix}.points"))?;
        let key = format!("{prefix}.points");
        self.check(&key, points >= 1, "must be at least 1")?;
        self.check(&key, points == 1 || start != stop, "covers an empty range")?;
        self.check(&key, start.is_finite() && stop.is_finite(), "has a non-finite end")?;
        Ok(ScanAxis { start: to_internal(start), stop: to_internal(stop), points })
    }

    fn effective(&self) -> BTreeMap<String, String> {
        let mut out: BTreeMap<String, String> = KEYS
            .iter()
            .filter_map(|(k, d)| d.map(|d| (k.to_string(), d.to_string())))
            .collect();
        for (k, e) in &self.entries {
            out.insert(k.clone(), e.value.clone());
        }
        out
    }

    pub fn resolve(&self) -> Result<RunConfig, ConfigError> {
        let f = |key: &str| self.require::<f64>(key);
        let freq = |key: &str| f(key).map(mhz);
        let angle = |key: &str| f(key).map(f64::to_radians);

        let system = SystemParams {
            omega_p: freq("system.omega_p")?,
            omega_s: freq("system.omega_s")?,
            delta_p: freq("system.delta_p")?,
            delta_s: freq("system.delta_s")?,
            phi: angle("system.phi")?,
            gamma_e: freq("system.gamma_e")?,
            tau_r: f("system.tau_r")?,
            gamma_laser_p: freq("system.laser_linewidth_p")?,
            gamma_laser_s: freq("system.laser_linewidth_s")?,
            branch_e_to_s_minus: f("system.branch_e_to_s_minus")?,
            branch_e_to_s_plus: f("system.branch_e_to_s_plus")?,
            branch_r_to_s_minus: f("system.branch_r_to_s_minus")?,
            branch_r_to_s_plus: f("system.branch_r_to_s_plus")?,
            branch_r_to_d: f("system.branch_r_to_d")?,
            stark_1: freq("system.stark_1")?,
        };
        system.validate().map_err(|e| invalid("system", e.to_string()))?;

        let experiment: ExperimentKind = {
            let entry = self.entries.get("experiment.kind").ok_or_else(|| ConfigError::Missing("experiment.kind".into()))?;
            entry.value.parse().map_err(|msg| invalid(&entry.origin, msg))?
        };

        let t_rise = f("experiment.t_rise")?;
        self.check("experiment.t_rise", t_rise > 0.0 && t_rise.is_finite(), "must be positive")?;
        let wait = f("experiment.wait")?;
        self.check("experiment.wait", wait >= 0.0 && wait.is_finite(), "must be non-negative")?;
        let t_ex = f("experiment.t_ex")?;
        self.check("experiment.t_ex", t_ex > 0.0 && t_ex.is_finite(), "must be positive")?;
        let dt = f("run.dt")?;
        self.check("run.dt", dt > 0.0 && dt.is_finite(), "must be positive")?;
        let shots: u64 = self.require("run.shots")?;
        self.check("run.shots", shots > 0, "must be positive")?;

        let scan = match experiment {
            ExperimentKind::PhaseScan => Some(self.axis("scan", f64::to_radians)?),
            ExperimentKind::LifetimeFit => {
                let axis = self.axis("scan", |x| x)?;
                self.check("scan.start", axis.start.min(axis.stop) >= 0.0, "waits must be non-negative")?;
                Some(axis)
            }
            ExperimentKind::AutlerTownes | ExperimentKind::AvoidedCrossing => Some(self.axis("scan", mhz)?),
            _ => None,
        };
        let scan2 = match experiment {
            ExperimentKind::AvoidedCrossing => Some(self.axis("scan2", mhz)?),
            _ => None,
        };

        let noise: bool = self.require("run.noise")?;
        let seed: Option<u64> = self.get("run.seed")?;
        if experiment.needs_seed(noise) && seed.is_none() {
            return Err(ConfigError::Missing("run.seed".into()));
        }

        let fit = FitSettings {
            walkers: self.require("fit.walkers")?,
            steps: self.require("fit.steps")?,
            burn_in: self.require("fit.burn_in")?,
            floor: self.require("fit.floor")?,
        };
        self.check("fit.walkers", fit.walkers >= 2, "must be at least 2")?;
        self.check("fit.steps", fit.steps > fit.burn_in, "must exceed fit.burn_in")?;
        let bootstrap: usize = self.require("tomography.bootstrap")?;
        self.check("tomography.bootstrap", bootstrap == 0 || bootstrap >= 100, "must be 0 or at least 100")?;

        let format = {
            let value: String = self.require("run.format")?;
            value.parse().map_err(|msg| invalid(self.origin("run.format"), msg))?
        };

        Ok(RunConfig {
            system,
            experiment,
            t_rise,
            wait,
            phi: angle("experiment.phi")?,
            t_ex,
            scan,
            scan2,
            shots,
            seed,
            dt,
            noise,
            output: PathBuf::from(self.require::<String>("run.output")?),
            format,
            fit,
            bootstrap,
            ramsey_angle_error: angle("ramsey.angle_error")?,
            settings: self.effective(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rydberg_core::to_mhz;

    fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        RawConfig::parse(text, "test.cfg")?.resolve()
    }

    #[test]
    fn units_are_converted_on_load() {
        let c = parse("experiment.kind = stirap-single\nsystem.omega_p = 10\nsystem.phi = 90\n").unwrap();
        assert!((c.system.omega_p - 2.0 * std::f64::consts::PI * 10.0).abs() < 1e-12);
        assert!((c.system.phi - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert!((to_mhz(c.system.gamma_e) - 4.5).abs() < 1e-12);
        assert_eq!(c.system.tau_r, 2.3);
    }

    #[test]
    fn sections_and_comments() {
        let text = "# header\n[experiment]\nkind = phase-scan # inline\n[scan]\nstart = 0\nstop = 360\npoints = 25\n";
        let c = parse(text).unwrap();
        assert_eq!(c.experiment, ExperimentKind::PhaseScan);
        let v = c.scan.unwrap().values();
        assert_eq!(v.len(), 25);
        assert!((v[24] - std::f64::consts::TAU).abs() < 1e-12);
    }

    #[test]
    fn errors_name_the_line() {
        let err = parse("experiment.kind = stirap-single\nsystem.omega_p = fast\n").unwrap_err();
        assert!(err.to_string().starts_with("test.cfg:2:"), "{err}");
        let err = parse("experiment.kind = stirap-single\n\nbogus.key = 1\n").unwrap_err();
        assert!(err.to_string().starts_with("test.cfg:3:"), "{err}");
        let err = parse("experiment.kind stirap-single\n").unwrap_err();
        assert!(err.to_string().starts_with("test.cfg:1:"), "{err}");
    }

    #[test]
    fn missing_fields_are_reported() {
        assert!(matches!(parse("system.omega_p = 1\n"), Err(ConfigError::Missing(k)) if k == "experiment.kind"));
        assert!(matches!(parse("experiment.kind = phase-scan\n"), Err(ConfigError::Missing(k)) if k == "scan.start"));
        let lifetime = "experiment.kind = lifetime-fit\nscan.start = 0\nscan.stop = 6\nscan.points = 8\n";
        assert!(matches!(parse(lifetime), Err(ConfigError::Missing(k)) if k == "run.seed"));
    }

    #[test]
    fn validation_rejects_bad_values() {
        assert!(parse("experiment.kind = stirap-single\nrun.dt = 0\n").is_err());
        assert!(parse("experiment.kind = stirap-single\nsystem.branch_r_to_d = 2\n").is_err());
        let empty = "experiment.kind = phase-scan\nscan.start = 10\nscan.stop = 10\nscan.points = 5\n";
        assert!(parse(empty).is_err());
        assert!(parse("experiment.kind = stirap-single\nexperiment.kind = tomography\n").is_err());
    }

    #[test]
    fn overrides_win_and_settings_round_trip() {
        let mut raw = RawConfig::parse("experiment.kind = stirap-single\nsystem.omega_p = 47\n", "t").unwrap();
        raw.set("system.omega_p=30").unwrap();
        assert!(raw.set("nonsense").is_err());
        let c = raw.resolve().unwrap();
        assert_eq!(c.settings["system.omega_p"], "30");
        let again = RawConfig::from_settings(&c.settings, "manifest").unwrap().resolve().unwrap();
        assert_eq!(again, c);
    }
}
