//! Experiment drivers: STIRAP transfer and return, the Rydberg lifetime and
//! phase scans, absorption spectroscopy, and binomial projection noise.
//!
//! Scan points are independent and evaluated in parallel; results keep input
//! order. Noise draws use one counter-based stream per point so the output
//! does not depend on scheduling.

use std::f64::consts::FRAC_PI_2;
use std::io::{self, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hamiltonian::{resonance_positions, to_mhz, SystemParams};
use crate::lindblad::{build_model, evolve_with, EvolveOptions, Level, LindbladError, ModelError, DEFAULT_DT};
use crate::pulses::{self, PulseError, PulseSequence};

/// Repetitions per measurement point.
pub const DEFAULT_SHOTS: u64 = 50;

/// Number of P₀(t) samples used to fit the depletion rate.
const RATE_SAMPLES: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Integration(#[from] LindbladError),
    #[error(transparent)]
    Pulse(#[from] PulseError),
    #[error("scan has no points")]
    EmptyScan,
    #[error("shots must be at least 1")]
    NoShots,
    #[error("exposure time must be positive, got {0}")]
    BadExposure(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    /// Column name of the scanned variable, including its unit.
    pub x_label: String,
    pub x: Vec<f64>,
    /// Model probability per point.
    pub p: Vec<f64>,
    pub shots: u64,
    /// Simulated detection counts when projection noise was added.
    #[serde(default)]
    pub counts: Option<Vec<u64>>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl ExperimentResult {
    pub fn new(x_label: impl Into<String>, x: Vec<f64>, p: Vec<f64>) -> Self {
        Self {
            x_label: x_label.into(),
            x,
            p: p.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            shots: DEFAULT_SHOTS,
            counts: None,
            seed: None,
            notes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Observed frequencies when counts exist, model probabilities otherwise.
    pub fn observed(&self) -> Vec<f64> {
        match &self.counts {
            Some(c) => c.iter().map(|&n| n as f64 / self.shots as f64).collect(),
            None => self.p.clone(),
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{},p_model,counts,shots", self.x_label)?;
        for k in 0..self.x.len() {
            let counts = self.counts.as_ref().map(|c| c[k].to_string()).unwrap_or_default();
            writeln!(w, "{},{},{},{}", self.x[k], self.p[k], counts, self.shots)?;
        }
        Ok(())
    }
}

/// Integration settings shared by all drivers.
#[derive(Clone, Debug, PartialEq)]
pub struct Simulator {
    pub dt: f64,
    /// Added to the nominal π/2 of each Ramsey pulse, in rad.
    pub ramsey_angle_error: f64,
}

impl Default for Simulator {
    fn default() -> Self {
        Self { dt: DEFAULT_DT, ramsey_angle_error: 0.0 }
    }
}

impl Simulator {
    pub fn with_dt(dt: f64) -> Self {
        Self { dt, ..Self::default() }
    }

    fn final_population(
        &self,
        p: &SystemParams,
        dim: usize,
        seq: &PulseSequence,
        level: Level,
    ) -> Result<f64, ExperimentError> {
        let model = build_model(p, dim)?;
        let rho0 = model.ket_state(Level::Zero).expect("every model has |0>");
        let traj = evolve_with(&model, seq, &rho0, &EvolveOptions::breakpoints_only(self.dt))?;
        Ok(traj.final_population(level).expect("level in model"))
    }

    /// Population of |r⟩ when the transfer completes, i.e. when the Stokes
    /// beam has ramped off.
    pub fn single_stirap(&self, p: &SystemParams, t_rise: f64) -> Result<f64, ExperimentError> {
        let seq = pulses::single_stirap(p, t_rise)?;
        let model = build_model(p, 5)?;
        let rho0 = model.ket_state(Level::Zero).expect("every model has |0>");
        let traj = evolve_with(&model, &seq, &rho0, &EvolveOptions::breakpoints_only(self.dt))?;
        let t_done = seq.stokes_end().unwrap_or(seq.total_duration);
        let r = model.index(Level::Rydberg).expect("every model has |r>");
        Ok(traj.state_at(t_done).population(r))
    }

    /// Population returned to |0⟩ by the double sequence.
    pub fn double_stirap(&self, p: &SystemParams, t_rise: f64, wait: f64, phi: f64) -> Result<f64, ExperimentError> {
        let seq = pulses::double_stirap(p, t_rise, wait, phi)?;
        self.final_population(p, 5, &seq, Level::Zero)
    }

    pub fn lifetime_scan(&self, p: &SystemParams, t_rise: f64, waits: &[f64]) -> Result<ExperimentResult, ExperimentError> {
        if waits.is_empty() {
            return Err(ExperimentError::EmptyScan);
        }
        let p0 = waits
            .par_iter()
            .map(|&w| self.double_stirap(p, t_rise, w, 0.0))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ExperimentResult::new("wait_us", waits.to_vec(), p0))
    }

    /// Ramsey interferometer around the double sequence; both π/2 pulses
    /// share phase 0 and the Stokes phase of the return leg is scanned.
    pub fn phase_scan(
        &self,
        p: &SystemParams,
        t_rise: f64,
        wait: f64,
        phis: &[f64],
    ) -> Result<ExperimentResult, ExperimentError> {
        if phis.is_empty() {
            return Err(ExperimentError::EmptyScan);
        }
        let angle = FRAC_PI_2 + self.ramsey_angle_error;
        let p0 = phis
            .par_iter()
            .map(|&phi| {
                let inner = pulses::double_stirap(p, t_rise, wait, phi)?;
                let seq = pulses::ramsey_wrap(&inner, angle, 0.0, 0.0)?;
                self.final_population(p, 5, &seq, Level::Zero)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ExperimentResult::new("phi_rad", phis.to_vec(), p0))
    }

    /// Depletion rate of |0⟩ under constant illumination in the four-level
    /// model, from a least-squares fit of ln P₀(t).
    pub fn absorption_rate(&self, p: &SystemParams, t_ex: f64) -> Result<f64, ExperimentError> {
        if !(t_ex > 0.0 && t_ex.is_finite()) {
            return Err(ExperimentError::BadExposure(t_ex));
        }
        if p.omega_p == 0.0 {
            return Ok(0.0);
        }
        let model = build_model(p, 4)?;
        let seq = pulses::continuous_illumination(p, t_ex)?;
        let rho0 = model.ket_state(Level::Zero).expect("every model has |0>");
        let steps = (t_ex / self.dt).ceil() as usize;
        let opts = EvolveOptions { dt: self.dt, stride: (steps / RATE_SAMPLES).max(1) };
        let traj = evolve_with(&model, &seq, &rho0, &opts)?;
        let p0 = traj.population(Level::Zero).expect("every model has |0>");
        let pts: Vec<(f64, f64)> = traj
            .times
            .iter()
            .zip(p0)
            .filter(|(_, &v)| v > 0.0)
            .map(|(&t, &v)| (t, v.ln()))
            .collect();
        Ok((-regression_slope(&pts)).max(0.0))
    }

    /// Excitation probability 1 − e^{−R·t_ex} against pump detuning. The x
    /// column is in MHz.
    pub fn absorption_scan(
        &self,
        p: &SystemParams,
        delta_ps: &[f64],
        t_ex: f64,
    ) -> Result<ExperimentResult, ExperimentError> {
        if delta_ps.is_empty() {
            return Err(ExperimentError::EmptyScan);
        }
        let probs = delta_ps
            .par_iter()
            .map(|&dp| {
                let q = SystemParams { delta_p: dp, ..p.clone() };
                self.absorption_rate(&q, t_ex).map(|r| -(-r * t_ex).exp_m1())
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut result = ExperimentResult::new("delta_p_MHz", delta_ps.iter().map(|&d| to_mhz(d)).collect(), probs);
        if strong_pump(p) {
            result.notes.push(format!(
                "pump Rabi frequency {:.3} MHz is not small against the linewidth of |e>",
                to_mhz(p.omega_p)
            ));
        }
        Ok(result)
    }

    pub fn avoided_crossing(
        &self,
        p: &SystemParams,
        delta_ps: &[f64],
        delta_ss: &[f64],
        t_ex: f64,
    ) -> Result<CrossingMap, ExperimentError> {
        if delta_ps.is_empty() || delta_ss.is_empty() {
            return Err(ExperimentError::EmptyScan);
        }
        let cells: Vec<(usize, usize)> =
            (0..delta_ss.len()).flat_map(|i| (0..delta_ps.len()).map(move |j| (i, j))).collect();
        let flat = cells
            .par_iter()
            .map(|&(i, j)| {
                let q = SystemParams { delta_p: delta_ps[j], delta_s: delta_ss[i], ..p.clone() };
                self.absorption_rate(&q, t_ex).map(|r| -(-r * t_ex).exp_m1())
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(CrossingMap {
            delta_p_mhz: delta_ps.iter().map(|&d| to_mhz(d)).collect(),
            delta_s_mhz: delta_ss.iter().map(|&d| to_mhz(d)).collect(),
            omega_s_mhz: to_mhz(p.omega_s),
            p: flat.chunks(delta_ps.len()).map(|c| c.to_vec()).collect(),
        })
    }
}

pub fn run_single_stirap(p: &SystemParams, t_rise: f64) -> Result<f64, ExperimentError> {
    Simulator::default().single_stirap(p, t_rise)
}

pub fn run_double_stirap(p: &SystemParams, t_rise: f64, wait: f64, phi: f64) -> Result<f64, ExperimentError> {
    Simulator::default().double_stirap(p, t_rise, wait, phi)
}

pub fn run_lifetime_scan(p: &SystemParams, t_rise: f64, waits: &[f64]) -> Result<ExperimentResult, ExperimentError> {
    Simulator::default().lifetime_scan(p, t_rise, waits)
}

pub fn run_phase_scan(p: &SystemParams, t_rise: f64, phis: &[f64]) -> Result<ExperimentResult, ExperimentError> {
    Simulator::default().phase_scan(p, t_rise, 0.0, phis)
}

pub fn run_absorption_scan(p: &SystemParams, delta_ps: &[f64], t_ex: f64) -> Result<ExperimentResult, ExperimentError> {
    Simulator::default().absorption_scan(p, delta_ps, t_ex)
}

pub fn run_avoided_crossing(
    p: &SystemParams,
    delta_ps: &[f64],
    delta_ss: &[f64],
    t_ex: f64,
) -> Result<CrossingMap, ExperimentError> {
    Simulator::default().avoided_crossing(p, delta_ps, delta_ss, t_ex)
}

/// Below this pump strength the absorption line is not power broadened.
pub fn strong_pump(p: &SystemParams) -> bool {
    p.omega_p >= p.gamma_e / 5.0
}

fn regression_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return 0.0;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Absorption probability over a (Δ_P, Δ_S) grid; `p[i][j]` belongs to
/// `delta_s_mhz[i]` and `delta_p_mhz[j]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossingMap {
    pub delta_p_mhz: Vec<f64>,
    pub delta_s_mhz: Vec<f64>,
    pub omega_s_mhz: f64,
    pub p: Vec<Vec<f64>>,
}

impl CrossingMap {
    /// Grid positions of the two strongest local maxima in each Δ_S row,
    /// sorted ascending.
    pub fn ridges(&self) -> Vec<Vec<f64>> {
        self.p
            .iter()
            .map(|row| {
                let mut idx = local_maxima(row);
                idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
                idx.truncate(2);
                let mut pos: Vec<f64> = idx.into_iter().map(|k| self.delta_p_mhz[k]).collect();
                pos.sort_by(f64::total_cmp);
                pos
            })
            .collect()
    }

    /// Dressed-state resonances for each Δ_S row, in MHz.
    pub fn stark_curves(&self) -> Vec<(f64, f64)> {
        self.delta_s_mhz.iter().map(|&ds| resonance_positions(ds, self.omega_s_mhz)).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "delta_s_MHz,delta_p_MHz,p_model,ridge_lo_MHz,ridge_hi_MHz")?;
        for (i, row) in self.p.iter().enumerate() {
            let (lo, hi) = resonance_positions(self.delta_s_mhz[i], self.omega_s_mhz);
            for (j, v) in row.iter().enumerate() {
                writeln!(w, "{},{},{},{},{}", self.delta_s_mhz[i], self.delta_p_mhz[j], v, lo, hi)?;
            }
        }
        Ok(())
    }
}

fn local_maxima(y: &[f64]) -> Vec<usize> {
    (1..y.len().saturating_sub(1)).filter(|&k| y[k] > y[k - 1] && y[k] >= y[k + 1]).collect()
}

/// Interior local maxima of a sampled curve, refined by a parabola through
/// each maximum and its neighbours, strongest first.
pub fn find_peaks(x: &[f64], y: &[f64]) -> Vec<(f64, f64)> {
    let mut peaks: Vec<(f64, f64)> = local_maxima(y)
        .into_iter()
        .map(|k| {
            let (x0, x1, x2) = (x[k - 1], x[k], x[k + 1]);
            let (y0, y1, y2) = (y[k - 1], y[k], y[k + 1]);
            let d1 = (y1 - y0) / (x1 - x0);
            let d2 = (y2 - y1) / (x2 - x1);
            let curv = (d2 - d1) / (x2 - x0);
            if curv >= 0.0 {
                return (x1, y1);
            }
            // vertex of the interpolating parabola
            let xv = 0.5 * (x0 + x1) - d1 / (2.0 * curv);
            let yv = y1 + d1 * (xv - x1) + curv * (xv - x0) * (xv - x1);
            (xv, yv)
        })
        .collect();
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1));
    peaks
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lorentzian {
    pub center: f64,
    pub fwhm: f64,
    pub amplitude: f64,
}

impl Lorentzian {
    pub fn eval(&self, x: f64) -> f64 {
        let u = 2.0 * (x - self.center) / self.fwhm;
        self.amplitude / (1.0 + u * u)
    }
}

/// Lorentzian through the points above `floor`·max, from a quadratic
/// least-squares fit of 1/y.
pub fn fit_lorentzian(x: &[f64], y: &[f64], floor: f64) -> Option<Lorentzian> {
    let ymax = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(ymax > 0.0) {
        return None;
    }
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(_, &v)| v > floor * ymax)
        .map(|(&a, &v)| (a, 1.0 / v))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    // weights y² turn the fit of 1/y into a relative fit of y
    let mut ata = [[0.0f64; 3]; 3];
    let mut atb = [0.0f64; 3];
    for &(a, inv) in &pts {
        let w = 1.0 / (inv * inv);
        let row = [1.0, a, a * a];
        for r in 0..3 {
            for c in 0..3 {
                ata[r][c] += w * row[r] * row[c];
            }
            atb[r] += w * row[r] * inv;
        }
    }
    let [c0, c1, c2] = solve3(ata, atb)?;
    if !(c2 > 0.0) {
        return None;
    }
    // 1/y = c2 (x − x0)² + m, with m = 1/A and c2 = 4/(A w²)
    let center = -c1 / (2.0 * c2);
    let m = c0 - c1 * c1 / (4.0 * c2);
    if !(m > 0.0) {
        return None;
    }
    Some(Lorentzian { center, fwhm: 2.0 * (m / c2).sqrt(), amplitude: 1.0 / m })
}

pub(crate) fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..3 {
            let f = a[r][col] / a[col][col];
            for c in col..3 {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for r in (0..3).rev() {
        let s: f64 = (r + 1..3).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Counter-based generator: stream `stream` of the ChaCha8 sequence for `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws binomial detection counts for each point, one RNG stream per point.
pub fn add_projection_noise(result: &ExperimentResult, shots: u64, seed: u64) -> Result<ExperimentResult, ExperimentError> {
    if shots == 0 {
        return Err(ExperimentError::NoShots);
    }
    let counts = result
        .p
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let mut rng = stream_rng(seed, k as u64);
            Binomial::new(shots, p.clamp(0.0, 1.0)).expect("probability in [0, 1]").sample(&mut rng)
        })
        .collect();
    Ok(ExperimentResult { shots, counts: Some(counts), seed: Some(seed), ..result.clone() })
}
