//! Lindblad master equation for the three-, four- and five-level models.
//!
//! Level ordering is (|1⟩, |S+⟩, |0⟩, |e⟩, |r⟩), truncated from the front for
//! the smaller models. In the four-level model both Zeeman sublevels of the
//! ground state are lumped into one sink |S⟩; in the three-level model
//! population leaving {|0⟩, |e⟩, |r⟩} is lost.
//!
//! Decay of |e⟩ and |r⟩ is a direct jump to the ground sublevels, with an
//! optional |r⟩ → |0⟩ recycling branch. Laser linewidths enter as
//! white-frequency-noise dephasing: √(2γ_P)·(|e⟩⟨e| + |r⟩⟨r|) for the pump and
//! √(2γ_S)·|r⟩⟨r| for the Stokes laser.

use std::io::{self, Write};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hamiltonian::{ladder_matrix, ParamError, SystemParams};
use crate::linalg::{ComplexMatrix, DensityMatrix, I, ZERO};
use crate::pulses::{Channel, PulseSequence};

/// Integration step used by the experiment drivers, in μs.
pub const DEFAULT_DT: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unsupported model dimension {0}; expected 3, 4 or 5")]
    InvalidDim(usize),
    #[error("branching fractions inconsistent with the model: {0}")]
    Branching(ParamError),
    #[error(transparent)]
    Params(ParamError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LindbladError {
    #[error("step {dt} μs is too large; at most {max} μs (1/50 of the shortest ramp)")]
    StepTooLarge { dt: f64, max: f64 },
    #[error("step must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("initial state has dimension {got}, model has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("trace drifted to {trace} at t = {t} μs")]
    TraceDrift { t: f64, trace: f64 },
    #[error("sequence drives the qubit but the {0}-level model has no |1>")]
    NoQubitLevel(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Level {
    /// 5S₁/₂, m = −1/2: the second qubit state.
    One,
    /// 5S₁/₂, m = +1/2.
    SPlus,
    /// Both 5S₁/₂ sublevels, four-level model only.
    Ground,
    Zero,
    Excited,
    Rydberg,
}

impl Level {
    pub fn label(self) -> &'static str {
        match self {
            Level::One => "1",
            Level::SPlus => "S+",
            Level::Ground => "S",
            Level::Zero => "0",
            Level::Excited => "e",
            Level::Rydberg => "r",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CollapseKind {
    /// Full dissipator L ρ L† − ½{L†L, ρ}.
    Jump,
    /// Loss out of the model, −½{L†L, ρ} only.
    Loss,
}

#[derive(Clone, Debug)]
pub struct CollapseOperator {
    pub label: String,
    /// Operator with the square root of its rate folded in.
    pub operator: ComplexMatrix,
    pub kind: CollapseKind,
}

#[derive(Clone, Debug)]
pub struct LevelModel {
    pub dim: usize,
    pub levels: Vec<Level>,
    pub collapse: Vec<CollapseOperator>,
    pub params: SystemParams,
}

impl LevelModel {
    pub fn index(&self, level: Level) -> Option<usize> {
        self.levels.iter().position(|&l| l == level)
    }

    fn idx(&self, level: Level) -> usize {
        self.index(level).expect("level present in model")
    }

    pub fn trace_preserving(&self) -> bool {
        self.collapse.iter().all(|c| c.kind == CollapseKind::Jump)
    }

    /// Basis state of the model.
    pub fn ket_state(&self, level: Level) -> Option<DensityMatrix> {
        self.index(level).map(|k| DensityMatrix::basis(self.dim, k))
    }

    /// Total rate out of `level` through the collapse operators that remove
    /// population from it.
    pub fn decay_rate_from(&self, level: Level) -> f64 {
        let k = self.idx(level);
        self.collapse
            .iter()
            .map(|c| {
                (0..self.dim)
                    .filter(|&i| c.kind == CollapseKind::Loss || i != k)
                    .map(|i| c.operator[(i, k)].norm_sqr())
                    .sum::<f64>()
            })
            .sum()
    }

    /// Hamiltonian at time `t` of `seq`.
    pub fn hamiltonian(&self, seq: &PulseSequence, t: f64) -> ComplexMatrix {
        let mut h = ComplexMatrix::zeros(self.dim);
        let stokes_peak = seq.peak(Channel::Stokes);
        self.fill_hamiltonian(seq, stokes_peak, t, h.entries_mut());
        h
    }

    fn fill_hamiltonian(&self, seq: &PulseSequence, stokes_peak: f64, t: f64, out: &mut [C64]) {
        let d = self.dim;
        out.iter_mut().for_each(|z| *z = ZERO);
        let p = &self.params;
        let (op, php) = seq.envelope_unchecked(Channel::Pump, t);
        let (os, phs) = seq.envelope_unchecked(Channel::Stokes, t);
        let ladder = ladder_matrix(op, php, os, phs, p.delta_p, p.delta_s);
        let idx = [self.idx(Level::Zero), self.idx(Level::Excited), self.idx(Level::Rydberg)];
        for (a, &ia) in idx.iter().enumerate() {
            for (b, &ib) in idx.iter().enumerate() {
                out[ia * d + ib] = ladder[(a, b)];
            }
        }
        if let Some(one) = self.index(Level::One) {
            if stokes_peak > 0.0 && p.stark_1 != 0.0 {
                let x = os / stokes_peak;
                out[one * d + one] = C64::new(p.stark_1 * x * x, 0.0);
            }
            let (oq, phq) = seq.envelope_unchecked(Channel::Qubit, t);
            if oq != 0.0 {
                let zero = idx[0];
                let c = C64::from_polar(oq / 2.0, -phq);
                out[zero * d + one] = c;
                out[one * d + zero] = c.conj();
            }
        }
    }

    /// Instantaneous qubit rotation embedded in the model space.
    pub fn qubit_rotation(&self, angle: f64, phase: f64) -> Result<ComplexMatrix, LindbladError> {
        let one = self.index(Level::One).ok_or(LindbladError::NoQubitLevel(self.dim))?;
        let zero = self.idx(Level::Zero);
        let mut u = ComplexMatrix::identity(self.dim);
        let (s, c) = (0.5 * angle).sin_cos();
        u[(zero, zero)] = C64::new(c, 0.0);
        u[(one, one)] = C64::new(c, 0.0);
        u[(zero, one)] = -I * s * C64::from_polar(1.0, -phase);
        u[(one, zero)] = -I * s * C64::from_polar(1.0, phase);
        Ok(u)
    }

    /// Sparse superoperator of the dissipative part acting on row-major ρ.
    fn dissipator(&self) -> Vec<(usize, usize, C64)> {
        let d = self.dim;
        let n = d * d;
        let mut dense = vec![ZERO; n * n];
        for c in &self.collapse {
            let l = &c.operator;
            let m = &l.adjoint() * l;
            if c.kind == CollapseKind::Jump {
                for i in 0..d {
                    for k in 0..d {
                        if l[(i, k)] == ZERO {
                            continue;
                        }
                        for j in 0..d {
                            for q in 0..d {
                                dense[(i * d + j) * n + k * d + q] += l[(i, k)] * l[(j, q)].conj();
                            }
                        }
                    }
                }
            }
            for i in 0..d {
                for j in 0..d {
                    for k in 0..d {
                        dense[(i * d + j) * n + k * d + j] -= 0.5 * m[(i, k)];
                        dense[(i * d + j) * n + i * d + k] -= 0.5 * m[(k, j)];
                    }
                }
            }
        }
        let mut sparse = Vec::new();
        for r in 0..n {
            for col in 0..n {
                let v = dense[r * n + col];
                if v != ZERO {
                    sparse.push((r, col, v));
                }
            }
        }
        sparse
    }
}

fn projector(dim: usize, idx: &[usize]) -> ComplexMatrix {
    let mut p = ComplexMatrix::zeros(dim);
    for &k in idx {
        p[(k, k)] = C64::new(1.0, 0.0);
    }
    p
}

fn jump(dim: usize, to: usize, from: usize, rate: f64) -> ComplexMatrix {
    let mut m = ComplexMatrix::zeros(dim);
    m[(to, from)] = C64::new(rate.sqrt(), 0.0);
    m
}

pub fn build_model(p: &SystemParams, dim: usize) -> Result<LevelModel, ModelError> {
    let levels = match dim {
        5 => vec![Level::One, Level::SPlus, Level::Zero, Level::Excited, Level::Rydberg],
        4 => vec![Level::Ground, Level::Zero, Level::Excited, Level::Rydberg],
        3 => vec![Level::Zero, Level::Excited, Level::Rydberg],
        _ => return Err(ModelError::InvalidDim(dim)),
    };
    p.validate().map_err(|e| match e {
        ParamError::BranchSum { .. } | ParamError::RecyclingTooLarge(_) => ModelError::Branching(e),
        other => ModelError::Params(other),
    })?;
    let pos = |l: Level| levels.iter().position(|&x| x == l).unwrap();
    let (zero, e, r) = (pos(Level::Zero), pos(Level::Excited), pos(Level::Rydberg));
    let gamma_r = p.rydberg_decay_rate();
    let mut collapse = Vec::new();
    let mut push = |label: &str, operator: ComplexMatrix, kind: CollapseKind, rate: f64| {
        if rate > 0.0 {
            collapse.push(CollapseOperator { label: label.to_string(), operator, kind });
        }
    };

    match dim {
        5 => {
            let (one, splus) = (pos(Level::One), pos(Level::SPlus));
            let g = p.gamma_e;
            push("e->1", jump(dim, one, e, g * p.branch_e_to_s_minus), CollapseKind::Jump, g * p.branch_e_to_s_minus);
            push("e->S+", jump(dim, splus, e, g * p.branch_e_to_s_plus), CollapseKind::Jump, g * p.branch_e_to_s_plus);
            let (a, b) = (gamma_r * p.branch_r_to_s_minus, gamma_r * p.branch_r_to_s_plus);
            push("r->1", jump(dim, one, r, a), CollapseKind::Jump, a);
            push("r->S+", jump(dim, splus, r, b), CollapseKind::Jump, b);
        }
        4 => {
            let ground = pos(Level::Ground);
            push("e->S", jump(dim, ground, e, p.gamma_e), CollapseKind::Jump, p.gamma_e);
            let a = gamma_r * (p.branch_r_to_s_minus + p.branch_r_to_s_plus);
            push("r->S", jump(dim, ground, r, a), CollapseKind::Jump, a);
        }
        _ => {
            push("e->loss", jump(dim, e, e, p.gamma_e), CollapseKind::Loss, p.gamma_e);
            let a = gamma_r * (p.branch_r_to_s_minus + p.branch_r_to_s_plus);
            push("r->loss", jump(dim, r, r, a), CollapseKind::Loss, a);
        }
    }
    let d = gamma_r * p.branch_r_to_d;
    push("r->0", jump(dim, zero, r, d), CollapseKind::Jump, d);
    push(
        "pump linewidth",
        projector(dim, &[e, r]).scale_real((2.0 * p.gamma_laser_p).sqrt()),
        CollapseKind::Jump,
        p.gamma_laser_p,
    );
    push(
        "stokes linewidth",
        projector(dim, &[r]).scale_real((2.0 * p.gamma_laser_s).sqrt()),
        CollapseKind::Jump,
        p.gamma_laser_s,
    );

    Ok(LevelModel { dim, levels, collapse, params: p.clone() })
}

/// Output of [`evolve`].
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub levels: Vec<Level>,
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
    /// `populations[k][n]` is the population of level k at `times[n]`.
    pub populations: Vec<Vec<f64>>,
}

impl Trajectory {
    fn new(levels: Vec<Level>) -> Self {
        let n = levels.len();
        Self { levels, times: Vec::new(), states: Vec::new(), populations: vec![Vec::new(); n] }
    }

    fn record(&mut self, t: f64, y: &[C64], dim: usize) {
        let m = ComplexMatrix::from_entries(dim, y.to_vec()).expect("square state");
        for k in 0..dim {
            self.populations[k].push(m[(k, k)].re);
        }
        self.times.push(t);
        self.states.push(DensityMatrix::from_matrix_unchecked(m));
    }

    pub fn final_state(&self) -> &DensityMatrix {
        self.states.last().expect("trajectory has at least one sample")
    }

    pub fn population(&self, level: Level) -> Option<&[f64]> {
        let k = self.levels.iter().position(|&l| l == level)?;
        Some(&self.populations[k])
    }

    pub fn final_population(&self, level: Level) -> Option<f64> {
        self.population(level).and_then(|p| p.last().copied())
    }

    /// State recorded closest to time `t`.
    pub fn state_at(&self, t: f64) -> &DensityMatrix {
        let k = self
            .times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(k, _)| k)
            .expect("trajectory has at least one sample");
        &self.states[k]
    }

    /// CSV with time, level populations and the |0⟩–|r⟩ and |1⟩–|0⟩
    /// coherences when those levels exist.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let pos = |l: Level| self.levels.iter().position(|&x| x == l);
        let mut header = vec!["time".to_string()];
        header.extend(self.levels.iter().map(|l| format!("P_{}", l.label())));
        let mut pairs = Vec::new();
        if let (Some(z), Some(r)) = (pos(Level::Zero), pos(Level::Rydberg)) {
            pairs.push(("0r", z, r));
        }
        if let (Some(o), Some(z)) = (pos(Level::One), pos(Level::Zero)) {
            pairs.push(("10", o, z));
        }
        for (name, _, _) in &pairs {
            header.push(format!("re_rho_{name}"));
            header.push(format!("im_rho_{name}"));
        }
        writeln!(w, "{}", header.join(","))?;
        for (n, (t, state)) in self.times.iter().zip(&self.states).enumerate() {
            let mut row = vec![format!("{t}")];
            row.extend(self.populations.iter().map(|p| format!("{}", p[n])));
            for &(_, a, b) in &pairs {
                let z = state.coherence(a, b);
                row.push(format!("{}", z.re));
                row.push(format!("{}", z.im));
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct EvolveOptions {
    /// Maximum step; each span between breakpoints uses the largest
    /// step ≤ dt that divides it evenly.
    pub dt: f64,
    /// Record every `stride`-th step. Breakpoints of the sequence are always
    /// recorded.
    pub stride: usize,
}

impl EvolveOptions {
    pub fn every_step(dt: f64) -> Self {
        Self { dt, stride: 1 }
    }

    pub fn breakpoints_only(dt: f64) -> Self {
        Self { dt, stride: usize::MAX }
    }
}

/// Integrates the master equation through `seq`, sampling every step.
pub fn evolve(
    model: &LevelModel,
    seq: &PulseSequence,
    rho0: &DensityMatrix,
    dt: f64,
) -> Result<Trajectory, LindbladError> {
    evolve_with(model, seq, rho0, &EvolveOptions::every_step(dt))
}

pub fn evolve_with(
    model: &LevelModel,
    seq: &PulseSequence,
    rho0: &DensityMatrix,
    opts: &EvolveOptions,
) -> Result<Trajectory, LindbladError> {
    let dt = opts.dt;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(LindbladError::BadStep(dt));
    }
    if let Some(ramp) = seq.shortest_ramp() {
        let max = ramp / 50.0;
        if dt > max * (1.0 + 1e-12) {
            return Err(LindbladError::StepTooLarge { dt, max });
        }
    }
    let d = model.dim;
    if rho0.dim() != d {
        return Err(LindbladError::DimensionMismatch { expected: d, got: rho0.dim() });
    }
    let drives_qubit = !seq.rotations.is_empty() || seq.segments_on(Channel::Qubit).next().is_some();
    if drives_qubit && model.index(Level::One).is_none() {
        return Err(LindbladError::NoQubitLevel(d));
    }

    let dissipator = model.dissipator();
    let stokes_peak = seq.peak(Channel::Stokes);
    let trace_preserving = model.trace_preserving();
    let n = d * d;
    let mut y: Vec<C64> = rho0.matrix().entries().to_vec();
    let mut traj = Trajectory::new(model.levels.clone());
    let mut h0 = vec![ZERO; n];
    let mut hm = vec![ZERO; n];
    let mut h1 = vec![ZERO; n];
    let mut k = [vec![ZERO; n], vec![ZERO; n], vec![ZERO; n], vec![ZERO; n]];
    let mut tmp = vec![ZERO; n];

    let breakpoints = seq.breakpoints();
    let mut rotations = seq.rotations.iter().peekable();
    let mut apply_rotations = |t: f64, y: &mut Vec<C64>| -> Result<(), LindbladError> {
        while let Some(rot) = rotations.next_if(|r| r.time <= t + 1e-12) {
            let u = model.qubit_rotation(rot.angle, rot.phase)?;
            let rho = ComplexMatrix::from_entries(d, std::mem::take(y)).expect("square state");
            *y = rho.conjugate_by(&u).into_entries();
        }
        Ok(())
    };

    apply_rotations(0.0, &mut y)?;
    traj.record(0.0, &y, d);
    let mut step_count = 0usize;
    for span in breakpoints.windows(2) {
        let (t_a, t_b) = (span[0], span[1]);
        let steps = ((t_b - t_a) / dt - 1e-9).ceil().max(1.0) as usize;
        let h = (t_b - t_a) / steps as f64;
        model.fill_hamiltonian(seq, stokes_peak, t_a, &mut h0);
        for s in 0..steps {
            let t = t_a + s as f64 * h;
            let t_next = if s + 1 == steps { t_b } else { t + h };
            model.fill_hamiltonian(seq, stokes_peak, t + 0.5 * h, &mut hm);
            model.fill_hamiltonian(seq, stokes_peak, t_next, &mut h1);
            rk4_step(d, &h0, &hm, &h1, &dissipator, h, &mut y, &mut k, &mut tmp);
            std::mem::swap(&mut h0, &mut h1);
            step_count += 1;
            if s + 1 < steps && step_count % opts.stride.max(1) == 0 {
                traj.record(t_next, &y, d);
            }
        }
        let trace: f64 = (0..d).map(|i| y[i * d + i].re).sum();
        let drifted = if trace_preserving {
            (trace - 1.0).abs() > 1e-6
        } else {
            trace > 1.0 + 1e-6
        };
        if drifted || !trace.is_finite() {
            return Err(LindbladError::TraceDrift { t: t_b, trace });
        }
        apply_rotations(t_b, &mut y)?;
        traj.record(t_b, &y, d);
    }
    Ok(traj)
}

fn rhs(d: usize, h: &[C64], dissipator: &[(usize, usize, C64)], y: &[C64], out: &mut [C64]) {
    out.iter_mut().for_each(|z| *z = ZERO);
    for i in 0..d {
        for q in 0..d {
            let hiq = h[i * d + q];
            if hiq == ZERO {
                continue;
            }
            let a = -I * hiq;
            let b = I * hiq;
            for j in 0..d {
                // −i H ρ
                out[i * d + j] += a * y[q * d + j];
                // +i ρ H
                out[j * d + q] += y[j * d + i] * b;
            }
        }
    }
    for &(r, c, v) in dissipator {
        out[r] += v * y[c];
    }
}

#[allow(clippy::too_many_arguments)]
fn rk4_step(
    d: usize,
    h0: &[C64],
    hm: &[C64],
    h1: &[C64],
    dissipator: &[(usize, usize, C64)],
    h: f64,
    y: &mut [C64],
    k: &mut [Vec<C64>; 4],
    tmp: &mut [C64],
) {
    let [k1, k2, k3, k4] = k;
    rhs(d, h0, dissipator, y, k1);
    for ((t, &yi), &ki) in tmp.iter_mut().zip(y.iter()).zip(k1.iter()) {
        *t = yi + ki * (0.5 * h);
    }
    rhs(d, hm, dissipator, tmp, k2);
    for ((t, &yi), &ki) in tmp.iter_mut().zip(y.iter()).zip(k2.iter()) {
        *t = yi + ki * (0.5 * h);
    }
    rhs(d, hm, dissipator, tmp, k3);
    for ((t, &yi), &ki) in tmp.iter_mut().zip(y.iter()).zip(k3.iter()) {
        *t = yi + ki * h;
    }
    rhs(d, h1, dissipator, tmp, k4);
    let w = h / 6.0;
    for (i, yi) in y.iter_mut().enumerate() {
        *yi += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * w;
    }
}
