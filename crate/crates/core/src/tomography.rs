//! Single-qubit process tomography on the {|0⟩, |1⟩} qubit.
//!
//! Inputs are |0⟩, |1⟩, |+⟩ and |+i⟩; each output is measured in the X, Y and
//! Z bases by rotating the basis state onto |0⟩ and detecting |0⟩. Population
//! that leaks out of the qubit counts as the "−" outcome.
//!
//! The channel is written as E(ρ) = Σ χ_mn σ_m ρ σ_n† over (I, σx, σy, σz).
//! Maximum likelihood runs over χ = T†T with T upper triangular, mapped onto
//! trace-preserving channels by χ → MχM† with σ_m S^{−1/2} = Σ_j M_jm σ_j and
//! S = Σ χ_mn σ_n†σ_m.

use std::f64::consts::{FRAC_PI_2, PI};

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use num_complex::Complex64 as C64;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experiments::{stream_rng, ExperimentError, Simulator};
use crate::hamiltonian::SystemParams;
use crate::inference::percentiles;
use crate::lindblad::{build_model, evolve_with, EvolveOptions, Level};
use crate::linalg::{hermitian_eigensystem, pauli_basis, spectral_sum, ComplexMatrix, LinalgError, I, ONE, ZERO};
use crate::pulses::{double_stirap, PulseSequence, QubitRotation};

pub const INPUT_LABELS: [&str; 4] = ["0", "1", "+", "+i"];
pub const BASIS_LABELS: [&str; 3] = ["X", "Y", "Z"];

/// Preparation rotations (angle, phase) from |0⟩.
const PREPARATIONS: [Option<(f64, f64)>; 4] = [None, Some((PI, FRAC_PI_2)), Some((FRAC_PI_2, FRAC_PI_2)), Some((FRAC_PI_2, PI))];
/// Rotations taking the "+" eigenstate of each basis onto |0⟩.
const MEASUREMENTS: [Option<(f64, f64)>; 3] = [Some((FRAC_PI_2, -FRAC_PI_2)), Some((FRAC_PI_2, 0.0)), None];

const PENALTY: f64 = 1e3;
const MAX_ITERS: u64 = 10_000;
const SD_TOLERANCE: f64 = 1e-16;
const MAX_RESTARTS: usize = 30;
const MIN_STEP: f64 = 1e-7;
const PROB_CLIP: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TomographyError {
    #[error("dataset holds no counts")]
    Degenerate,
    #[error("counts for input {input}, basis {basis} sum to {sum}, expected {shots}")]
    CountMismatch { input: &'static str, basis: &'static str, sum: u64, shots: u64 },
    #[error("bootstrap needs at least 100 replicates, got {0}")]
    TooFewReplicates(usize),
    #[error("process matrix must be 4x4, got {0}")]
    BadShape(usize),
    #[error("optimizer failed: {0}")]
    Optimizer(String),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// `counts[input][basis] = [n_plus, n_minus]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TomographyDataset {
    pub shots: u64,
    pub counts: [[[u64; 2]; 3]; 4],
}

impl TomographyDataset {
    pub fn validate(&self) -> Result<(), TomographyError> {
        if self.shots == 0 || self.counts.iter().flatten().all(|c| c[0] + c[1] == 0) {
            return Err(TomographyError::Degenerate);
        }
        for (i, row) in self.counts.iter().enumerate() {
            for (b, c) in row.iter().enumerate() {
                if c[0] + c[1] != self.shots {
                    return Err(TomographyError::CountMismatch {
                        input: INPUT_LABELS[i],
                        basis: BASIS_LABELS[b],
                        sum: c[0] + c[1],
                        shots: self.shots,
                    });
                }
            }
        }
        Ok(())
    }

    /// Rounds `probs[input][basis]` of the "+" outcome to integer counts.
    pub fn from_probabilities(probs: &[[f64; 3]; 4], shots: u64) -> Self {
        let mut counts = [[[0u64; 2]; 3]; 4];
        for i in 0..4 {
            for b in 0..3 {
                let plus = (probs[i][b].clamp(0.0, 1.0) * shots as f64).round() as u64;
                counts[i][b] = [plus, shots - plus];
            }
        }
        Self { shots, counts }
    }

    /// Binomial draws around `probs`, one RNG stream per setting.
    pub fn sampled(probs: &[[f64; 3]; 4], shots: u64, seed: u64) -> Self {
        let mut counts = [[[0u64; 2]; 3]; 4];
        for i in 0..4 {
            for b in 0..3 {
                let mut rng = stream_rng(seed, (3 * i + b) as u64);
                let plus = Binomial::new(shots, probs[i][b].clamp(0.0, 1.0)).expect("probability").sample(&mut rng);
                counts[i][b] = [plus, shots - plus];
            }
        }
        Self { shots, counts }
    }

    pub fn frequencies(&self) -> [[f64; 3]; 4] {
        let mut f = [[0.0; 3]; 4];
        for i in 0..4 {
            for b in 0..3 {
                let [p, m] = self.counts[i][b];
                f[i][b] = p as f64 / (p + m).max(1) as f64;
            }
        }
        f
    }
}

/// χ in the Pauli basis (I, σx, σy, σz).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ChiRepr", into = "ChiRepr")]
pub struct ProcessMatrix {
    chi: ComplexMatrix,
}

#[derive(Serialize, Deserialize)]
struct ChiRepr {
    re: Vec<Vec<f64>>,
    im: Vec<Vec<f64>>,
}

impl From<ProcessMatrix> for ChiRepr {
    fn from(p: ProcessMatrix) -> Self {
        let part = |f: fn(C64) -> f64| (0..4).map(|i| (0..4).map(|j| f(p.chi[(i, j)])).collect()).collect();
        ChiRepr { re: part(|z| z.re), im: part(|z| z.im) }
    }
}

impl TryFrom<ChiRepr> for ProcessMatrix {
    type Error = TomographyError;
    fn try_from(r: ChiRepr) -> Result<Self, Self::Error> {
        if r.re.len() != 4 || r.im.len() != 4 || r.re.iter().chain(&r.im).any(|row| row.len() != 4) {
            return Err(TomographyError::BadShape(r.re.len()));
        }
        let entries = (0..16).map(|k| C64::new(r.re[k / 4][k % 4], r.im[k / 4][k % 4])).collect();
        Ok(Self { chi: ComplexMatrix::from_entries(4, entries)? })
    }
}

impl ProcessMatrix {
    pub fn new(chi: ComplexMatrix) -> Result<Self, TomographyError> {
        if chi.dim() != 4 {
            return Err(TomographyError::BadShape(chi.dim()));
        }
        Ok(Self { chi })
    }

    /// χ_mn = c_m c_n* for U = Σ c_m σ_m.
    pub fn from_unitary(u: &ComplexMatrix) -> Result<Self, TomographyError> {
        if u.dim() != 2 {
            return Err(TomographyError::BadShape(u.dim()));
        }
        let c: Vec<C64> = pauli_basis().iter().map(|s| (&s.adjoint() * u).trace() * 0.5).collect();
        let mut chi = ComplexMatrix::zeros(4);
        for m in 0..4 {
            for n in 0..4 {
                chi[(m, n)] = c[m] * c[n].conj();
            }
        }
        Ok(Self { chi })
    }

    pub fn identity() -> Self {
        Self::from_unitary(&ComplexMatrix::identity(2)).expect("2x2")
    }

    /// Ideal target: diag(1, −1) on (|0⟩, |1⟩).
    pub fn sigma_z() -> Self {
        Self::from_unitary(&pauli_basis()[3]).expect("2x2")
    }

    pub fn chi(&self) -> &ComplexMatrix {
        &self.chi
    }

    pub fn element(&self, m: usize, n: usize) -> C64 {
        self.chi[(m, n)]
    }

    pub fn apply(&self, rho: &ComplexMatrix) -> ComplexMatrix {
        let paulis = pauli_basis();
        let mut out = ComplexMatrix::zeros(2);
        for m in 0..4 {
            for n in 0..4 {
                let c = self.chi[(m, n)];
                if c == ZERO {
                    continue;
                }
                out = &out + &(&(&paulis[m] * rho) * &paulis[n].adjoint()).scale(c);
            }
        }
        out
    }

    /// ‖Σ χ_mn σ_n†σ_m − I‖ (Frobenius).
    pub fn trace_preservation_error(&self) -> f64 {
        let s = from_mat2(&s_matrix(&to_mat4(&self.chi)));
        (&s - &ComplexMatrix::identity(2)).norm()
    }

    pub fn min_eigenvalue(&self) -> Result<f64, TomographyError> {
        Ok(hermitian_eigensystem(&self.chi)?.values[0])
    }

    pub fn is_physical(&self) -> bool {
        self.chi.hermiticity_error() <= 1e-9
            && self.min_eigenvalue().map_or(false, |l| l >= -1e-9)
            && self.trace_preservation_error() <= 1e-6
    }
}

/// Tr(χ_ideal χ).
pub fn process_fidelity(chi: &ProcessMatrix, ideal: &ProcessMatrix) -> f64 {
    (&ideal.chi * &chi.chi).trace().re
}

type Mat2 = [[C64; 2]; 2];
type Mat4 = [[C64; 4]; 4];

fn to_mat4(m: &ComplexMatrix) -> Mat4 {
    let mut a = [[ZERO; 4]; 4];
    for (i, row) in a.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = m[(i, j)];
        }
    }
    a
}

fn from_mat4(a: &Mat4) -> ComplexMatrix {
    ComplexMatrix::from_entries(4, a.iter().flatten().copied().collect()).expect("4x4")
}

fn to_mat2(m: &ComplexMatrix) -> Mat2 {
    [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]]
}

fn from_mat2(a: &Mat2) -> ComplexMatrix {
    ComplexMatrix::from_rows(*a)
}

fn paulis2() -> [Mat2; 4] {
    pauli_basis().map(|p| to_mat2(&p))
}

fn mul2(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut c = [[ZERO; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

fn adj2(a: &Mat2) -> Mat2 {
    [[a[0][0].conj(), a[1][0].conj()], [a[0][1].conj(), a[1][1].conj()]]
}

fn s_matrix(chi: &Mat4) -> Mat2 {
    let p = paulis2();
    let mut s = [[ZERO; 2]; 2];
    for m in 0..4 {
        for n in 0..4 {
            let prod = mul2(&adj2(&p[n]), &p[m]);
            for i in 0..2 {
                for j in 0..2 {
                    s[i][j] += chi[m][n] * prod[i][j];
                }
            }
        }
    }
    s
}

/// S^{−1/2} for a positive definite 2×2 Hermitian S.
fn inv_sqrt2(s: &Mat2) -> Option<Mat2> {
    let det = (s[0][0] * s[1][1] - s[0][1] * s[1][0]).re;
    let tr = (s[0][0] + s[1][1]).re;
    if !(det > 0.0 && tr > 0.0) {
        return None;
    }
    let sd = det.sqrt();
    let t = (tr + 2.0 * sd).sqrt();
    // √S = (S + √det·I)/t; its inverse is (adj √S)/det(√S) with det(√S) = √det
    let r = [[(s[0][0] + sd) / t, s[0][1] / t], [s[1][0] / t, (s[1][1] + sd) / t]];
    Some([[r[1][1] / sd, -r[0][1] / sd], [-r[1][0] / sd, r[0][0] / sd]])
}

/// Trace-preserving image MχM† of `chi`.
fn normalize_tp(chi: &Mat4) -> Option<Mat4> {
    let w = inv_sqrt2(&s_matrix(chi))?;
    let p = paulis2();
    let mut m = [[ZERO; 4]; 4];
    for j in 0..4 {
        for k in 0..4 {
            let prod = mul2(&mul2(&p[j], &p[k]), &w);
            m[j][k] = (prod[0][0] + prod[1][1]) * 0.5;
        }
    }
    let mut out = [[ZERO; 4]; 4];
    for j in 0..4 {
        for k in 0..4 {
            let mut acc = ZERO;
            for a in 0..4 {
                for b in 0..4 {
                    acc += m[j][a] * chi[a][b] * m[k][b].conj();
                }
            }
            out[j][k] = acc;
        }
    }
    Some(out)
}

fn qubit_rotation2(angle: f64, phase: f64) -> Mat2 {
    let (s, c) = (0.5 * angle).sin_cos();
    [
        [C64::new(c, 0.0), -I * s * C64::from_polar(1.0, -phase)],
        [-I * s * C64::from_polar(1.0, phase), C64::new(c, 0.0)],
    ]
}

fn input_state(i: usize) -> Mat2 {
    let zero = [[ONE, ZERO], [ZERO, ZERO]];
    match PREPARATIONS[i] {
        None => zero,
        Some((a, ph)) => {
            let u = qubit_rotation2(a, ph);
            mul2(&mul2(&u, &zero), &adj2(&u))
        }
    }
}

fn plus_projector(b: usize) -> Mat2 {
    let zero = [[ONE, ZERO], [ZERO, ZERO]];
    match MEASUREMENTS[b] {
        None => zero,
        Some((a, ph)) => {
            let u = qubit_rotation2(a, ph);
            mul2(&mul2(&adj2(&u), &zero), &u)
        }
    }
}

/// `A[3i + b][m][n] = Tr(P_b σ_m ρ_i σ_n†)`, so that p = Re Σ χ_mn A_mn.
fn design() -> Vec<Mat4> {
    let p = paulis2();
    let mut out = Vec::with_capacity(12);
    for i in 0..4 {
        let rho = input_state(i);
        for b in 0..3 {
            let proj = plus_projector(b);
            let mut a = [[ZERO; 4]; 4];
            for m in 0..4 {
                for n in 0..4 {
                    let t = mul2(&mul2(&mul2(&proj, &p[m]), &rho), &adj2(&p[n]));
                    a[m][n] = t[0][0] + t[1][1];
                }
            }
            out.push(a);
        }
    }
    out
}

fn probabilities(chi: &Mat4, a: &[Mat4]) -> Vec<f64> {
    a.iter()
        .map(|am| {
            let mut acc = 0.0;
            for m in 0..4 {
                for n in 0..4 {
                    acc += (chi[m][n] * am[m][n]).re;
                }
            }
            acc
        })
        .collect()
}

/// "+" probabilities predicted by a channel for every setting.
pub fn channel_probabilities(chi: &ProcessMatrix) -> [[f64; 3]; 4] {
    let p = probabilities(&to_mat4(&chi.chi), &design());
    let mut out = [[0.0; 3]; 4];
    for (k, v) in p.into_iter().enumerate() {
        out[k / 3][k % 3] = v.clamp(0.0, 1.0);
    }
    out
}

/// Dataset with counts rounded from the exact channel statistics.
pub fn analytic_dataset(chi: &ProcessMatrix, shots: u64) -> TomographyDataset {
    TomographyDataset::from_probabilities(&channel_probabilities(chi), shots)
}

fn params_to_chi(x: &[f64]) -> Mat4 {
    // T upper triangular: diagonal from x[0..4], then (re, im) of each T_rc, r < c
    let mut t = [[ZERO; 4]; 4];
    for (k, row) in t.iter_mut().enumerate() {
        row[k] = C64::new(x[k], 0.0);
    }
    let mut idx = 4;
    for r in 0..4 {
        for c in r + 1..4 {
            t[r][c] = C64::new(x[idx], x[idx + 1]);
            idx += 2;
        }
    }
    let mut chi = [[ZERO; 4]; 4];
    for m in 0..4 {
        for n in 0..4 {
            let mut acc = ZERO;
            for k in 0..4 {
                acc += t[k][m].conj() * t[k][n];
            }
            chi[m][n] = acc;
        }
    }
    chi
}

/// Inverse of [`params_to_chi`] through a Cholesky factor χ = L L†, T = L†.
fn chi_to_params(chi: &Mat4) -> Vec<f64> {
    let mut l = [[ZERO; 4]; 4];
    for j in 0..4 {
        let mut d = chi[j][j].re;
        for k in 0..j {
            d -= l[j][k].norm_sqr();
        }
        let ljj = d.max(1e-300).sqrt();
        l[j][j] = C64::new(ljj, 0.0);
        for i in j + 1..4 {
            let mut acc = chi[i][j];
            for k in 0..j {
                acc -= l[i][k] * l[j][k].conj();
            }
            l[i][j] = acc / ljj;
        }
    }
    let mut x = vec![0.0; 16];
    for k in 0..4 {
        x[k] = l[k][k].re;
    }
    let mut idx = 4;
    for r in 0..4 {
        for c in r + 1..4 {
            let t = l[c][r].conj();
            x[idx] = t.re;
            x[idx + 1] = t.im;
            idx += 2;
        }
    }
    x
}

/// Linear-inversion estimate, generally not physical.
pub fn linear_inversion(data: &TomographyDataset) -> ProcessMatrix {
    let f = data.frequencies();
    let p = paulis2();
    let outputs: Vec<Mat2> = (0..4)
        .map(|i| {
            let r = [2.0 * f[i][0] - 1.0, 2.0 * f[i][1] - 1.0, 2.0 * f[i][2] - 1.0];
            let mut rho = [[ZERO; 2]; 2];
            for a in 0..2 {
                for b in 0..2 {
                    rho[a][b] = 0.5 * (p[0][a][b] + r[0] * p[1][a][b] + r[1] * p[2][a][b] + r[2] * p[3][a][b]);
                }
            }
            rho
        })
        .collect();
    // E(|i⟩⟨j|) from the four outputs
    let mut e = [[[[ZERO; 2]; 2]; 2]; 2];
    e[0][0] = outputs[0];
    e[1][1] = outputs[1];
    for a in 0..2 {
        for b in 0..2 {
            let mixed = outputs[0][a][b] + outputs[1][a][b];
            e[0][1][a][b] = outputs[2][a][b] + I * outputs[3][a][b] - C64::new(0.5, 0.5) * mixed;
            e[1][0][a][b] = outputs[2][a][b] - I * outputs[3][a][b] - C64::new(0.5, -0.5) * mixed;
        }
    }
    // χ = V† J V / 4 with J[(i,a),(j,b)] = E(|i⟩⟨j|)_ab and V[(i,a), m] = (σ_m)_ai
    let mut chi = [[ZERO; 4]; 4];
    for m in 0..4 {
        for n in 0..4 {
            let mut acc = ZERO;
            for i in 0..2 {
                for a in 0..2 {
                    for j in 0..2 {
                        for b in 0..2 {
                            acc += p[m][a][i].conj() * e[i][j][a][b] * p[n][b][j];
                        }
                    }
                }
            }
            chi[m][n] = acc * 0.25;
        }
    }
    ProcessMatrix { chi: from_mat4(&chi) }
}

#[derive(Clone)]
struct Likelihood {
    design: Vec<Mat4>,
    plus: Vec<f64>,
    minus: Vec<f64>,
    total: f64,
}

impl Likelihood {
    fn new(data: &TomographyDataset) -> Self {
        let flat: Vec<[u64; 2]> = data.counts.iter().flatten().copied().collect();
        Self {
            design: design(),
            plus: flat.iter().map(|c| c[0] as f64).collect(),
            minus: flat.iter().map(|c| c[1] as f64).collect(),
            total: flat.iter().map(|c| (c[0] + c[1]) as f64).sum(),
        }
    }

    fn nll(&self, chi: &Mat4) -> f64 {
        probabilities(chi, &self.design)
            .iter()
            .enumerate()
            .map(|(k, &p)| {
                let p = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
                -(self.plus[k] * p.ln() + self.minus[k] * (1.0 - p).ln())
            })
            .sum::<f64>()
            / self.total
    }

    fn objective(&self, x: &[f64]) -> f64 {
        let raw = params_to_chi(x);
        let s = s_matrix(&raw);
        let gauge: f64 = (0..2)
            .flat_map(|i| (0..2).map(move |j| (i, j)))
            .map(|(i, j)| (s[i][j] - if i == j { ONE } else { ZERO }).norm_sqr())
            .sum();
        match normalize_tp(&raw) {
            Some(chi) => self.nll(&chi) + PENALTY * gauge,
            None => f64::MAX / 4.0,
        }
    }
}

impl CostFunction for Likelihood {
    type Param = Vec<f64>;
    type Output = f64;
    fn cost(&self, x: &Self::Param) -> Result<f64, argmin::core::Error> {
        Ok(self.objective(x))
    }
}

fn nelder_mead(cost: &Likelihood, x0: Vec<f64>, step: f64) -> Result<(Vec<f64>, f64), TomographyError> {
    let n = x0.len();
    let mut simplex = vec![x0.clone()];
    for k in 0..n {
        let mut v = x0.clone();
        v[k] += step;
        simplex.push(v);
    }
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(SD_TOLERANCE)
        .map_err(|e| TomographyError::Optimizer(e.to_string()))?;
    let res = Executor::new(cost.clone(), solver)
        .configure(|s| s.max_iters(MAX_ITERS))
        .run()
        .map_err(|e| TomographyError::Optimizer(e.to_string()))?;
    let state = res.state();
    let best = state.get_best_param().cloned().unwrap_or(x0);
    Ok((best, state.get_best_cost()))
}

/// Maximum-likelihood channel, started from the PSD part of the
/// linear-inversion estimate and refined by restarted simplex searches.
pub fn reconstruct_process(data: &TomographyDataset) -> Result<ProcessMatrix, TomographyError> {
    data.validate()?;
    let lin = linear_inversion(data);
    let eig = hermitian_eigensystem(&lin.chi)?;
    let clipped: Vec<C64> = eig.values.iter().map(|&l| C64::new(l.max(0.0) + 1e-9, 0.0)).collect();
    let start = to_mat4(&spectral_sum(&eig, &clipped));
    // rescale so the start already sits close to the trace-preserving gauge
    let start = normalize_tp(&start).unwrap_or(to_mat4(&ComplexMatrix::identity(4).scale_real(0.25)));

    let cost = Likelihood::new(data);
    let mut x = chi_to_params(&start);
    let mut fx = cost.objective(&x);
    let mut step = 0.05;
    for _ in 0..MAX_RESTARTS {
        let (xn, fxn) = nelder_mead(&cost, x.clone(), step)?;
        let gain = fx - fxn;
        if fxn < fx {
            x = xn;
            fx = fxn;
        }
        if gain <= 1e-13 {
            // a stalled simplex restarts at a finer scale
            step *= 0.1;
            if step < MIN_STEP {
                break;
            }
        }
    }
    let chi = normalize_tp(&params_to_chi(&x)).ok_or(TomographyError::Degenerate)?;
    // exact Hermitian symmetry of the returned matrix
    let mut out = from_mat4(&chi);
    for i in 0..4 {
        out[(i, i)] = C64::new(out[(i, i)].re, 0.0);
        for j in i + 1..4 {
            let avg = 0.5 * (out[(i, j)] + out[(j, i)].conj());
            out[(i, j)] = avg;
            out[(j, i)] = avg.conj();
        }
    }
    Ok(ProcessMatrix { chi: out })
}

/// Sequence for one tomography setting around `inner`.
fn setting_sequence(inner: &PulseSequence, input: usize, basis: usize, angle_scale: f64) -> PulseSequence {
    let mut rotations = Vec::new();
    if let Some((a, ph)) = PREPARATIONS[input] {
        rotations.push(QubitRotation { time: 0.0, angle: a * angle_scale, phase: ph });
    }
    rotations.extend(inner.rotations.iter().cloned());
    if let Some((a, ph)) = MEASUREMENTS[basis] {
        rotations.push(QubitRotation { time: inner.total_duration, angle: a * angle_scale, phase: ph });
    }
    PulseSequence::new(inner.segments.clone(), rotations, inner.total_duration).expect("inner sequence is valid")
}

/// "+" probabilities of the five-level simulation of the double sequence
/// at Stokes phase π.
pub fn simulated_probabilities(sim: &Simulator, p: &SystemParams, t_rise: f64) -> Result<[[f64; 3]; 4], TomographyError> {
    let inner = double_stirap(p, t_rise, 0.0, PI).map_err(ExperimentError::from)?;
    let model = build_model(p, 5).map_err(ExperimentError::from)?;
    let rho0 = model.ket_state(Level::Zero).expect("|0> in model");
    let zero = model.index(Level::Zero).expect("|0> in model");
    let angle_scale = 1.0 + sim.ramsey_angle_error / FRAC_PI_2;
    let settings: Vec<(usize, usize)> = (0..4).flat_map(|i| (0..3).map(move |b| (i, b))).collect();
    let probs = settings
        .par_iter()
        .map(|&(i, b)| {
            let seq = setting_sequence(&inner, i, b, angle_scale);
            let traj = evolve_with(&model, &seq, &rho0, &EvolveOptions::breakpoints_only(sim.dt))
                .map_err(ExperimentError::from)?;
            Ok(traj.final_state().population(zero).clamp(0.0, 1.0))
        })
        .collect::<Result<Vec<f64>, TomographyError>>()?;
    let mut out = [[0.0; 3]; 4];
    for (k, v) in probs.into_iter().enumerate() {
        out[k / 3][k % 3] = v;
    }
    Ok(out)
}

pub fn simulate_tomography(
    sim: &Simulator,
    p: &SystemParams,
    t_rise: f64,
    shots: u64,
    seed: u64,
) -> Result<TomographyDataset, TomographyError> {
    if shots == 0 {
        return Err(TomographyError::Degenerate);
    }
    Ok(TomographyDataset::sampled(&simulated_probabilities(sim, p, t_rise)?, shots, seed))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityInterval {
    pub p16: f64,
    pub p50: f64,
    pub p84: f64,
    pub replicates: usize,
}

/// Parametric bootstrap of the fidelity to `ideal`: every replicate redraws
/// the counts binomially around the observed frequencies and refits.
pub fn bootstrap_errors(
    data: &TomographyDataset,
    ideal: &ProcessMatrix,
    replicates: usize,
    seed: u64,
) -> Result<FidelityInterval, TomographyError> {
    if replicates < 100 {
        return Err(TomographyError::TooFewReplicates(replicates));
    }
    data.validate()?;
    let freqs = data.frequencies();
    let mut fids = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let resampled = TomographyDataset::sampled(&freqs, data.shots, seed.wrapping_add(r as u64));
            reconstruct_process(&resampled).map(|chi| process_fidelity(&chi, ideal))
        })
        .collect::<Result<Vec<f64>, _>>()?;
    let q = percentiles(&mut fids, &[16.0, 50.0, 84.0]).expect("nonempty");
    Ok(FidelityInterval { p16: q[0], p50: q[1], p84: q[2], replicates })
}

/// `n` nearly uniform unit vectors (Fibonacci lattice).
pub fn sphere_grid(n: usize) -> Vec<[f64; 3]> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|k| {
            let z = 1.0 - (2.0 * k as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * k as f64;
            [r * phi.cos(), r * phi.sin(), z]
        })
        .collect()
}

/// Output Bloch vectors of `chi` for the pure inputs on `points`.
pub fn bloch_image(chi: &ProcessMatrix, points: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let paulis = pauli_basis();
    points
        .iter()
        .map(|r| {
            let mut rho = paulis[0].scale_real(0.5);
            for k in 0..3 {
                rho = &rho + &paulis[k + 1].scale_real(0.5 * r[k]);
            }
            let out = chi.apply(&rho);
            [1, 2, 3].map(|k| (&paulis[k] * &out).trace().re)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::hermitian_eigensystem;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const ANALYTIC_SHOTS: u64 = 1_000_000_000;

    fn depolarized(chi: &ProcessMatrix, keep: f64) -> ProcessMatrix {
        let mut m = chi.chi.scale_real(keep);
        for k in 0..4 {
            m[(k, k)] += C64::new((1.0 - keep) / 4.0, 0.0);
        }
        ProcessMatrix::new(m).unwrap()
    }

    fn rotation_channel(angle: f64, axis: [f64; 3]) -> ProcessMatrix {
        // exp(−iθ/2 n·σ) = cos(θ/2) I − i sin(θ/2) n·σ
        let p = pauli_basis();
        let (s, c) = (0.5 * angle).sin_cos();
        let mut u = p[0].scale_real(c);
        for k in 0..3 {
            u = &u + &p[k + 1].scale(-I * s * axis[k]);
        }
        ProcessMatrix::from_unitary(&u).unwrap()
    }

    #[test]
    fn state_preparations() {
        let s = 0.5;
        let expected = [
            [[1.0, 0.0], [0.0, 0.0]],
            [[0.0, 0.0], [0.0, 1.0]],
            [[s, s], [s, s]],
        ];
        for (i, e) in expected.iter().enumerate() {
            let rho = input_state(i);
            for a in 0..2 {
                for b in 0..2 {
                    assert!((rho[a][b] - C64::new(e[a][b], 0.0)).norm() < 1e-15);
                }
            }
        }
        // |+i⟩⟨+i| has ρ_10 = i/2
        assert!((input_state(3)[1][0] - C64::new(0.0, 0.5)).norm() < 1e-15);
    }

    #[test]
    fn measurement_projectors_pick_the_plus_eigenstates() {
        let p = paulis2();
        for b in 0..3 {
            let proj = plus_projector(b);
            let pauli = p[b + 1];
            for i in 0..2 {
                for j in 0..2 {
                    let expected = 0.5 * (p[0][i][j] + pauli[i][j]);
                    assert!((proj[i][j] - expected).norm() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn unitary_channels() {
        let z = ProcessMatrix::sigma_z();
        assert_abs_diff_eq!(z.element(3, 3).re, 1.0, epsilon = 1e-15);
        assert!(z.is_physical());
        assert_abs_diff_eq!(process_fidelity(&z, &z), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(process_fidelity(&ProcessMatrix::identity(), &z), 0.0, epsilon = 1e-12);
        // global phase of the target does not matter
        let phased = ProcessMatrix::from_unitary(&pauli_basis()[3].scale(C64::from_polar(1.0, 0.7))).unwrap();
        assert!(phased.chi.max_abs_diff(&z.chi) < 1e-12);
    }

    #[test]
    fn channel_action_matches_unitary_conjugation() {
        let chi = rotation_channel(0.9, [0.6, 0.0, 0.8]);
        let rho = from_mat2(&input_state(3));
        let p = pauli_basis();
        let (s, c) = 0.45f64.sin_cos();
        let u = &p[0].scale_real(c) + &(&p[1].scale(-I * s * 0.6) + &p[3].scale(-I * s * 0.8));
        assert!(chi.apply(&rho).max_abs_diff(&rho.conjugate_by(&u)) < 1e-12);
    }

    #[test]
    fn linear_inversion_is_exact_on_exact_statistics() {
        for chi in [ProcessMatrix::sigma_z(), depolarized(&rotation_channel(1.2, [0.0, 0.6, 0.8]), 0.7)] {
            let lin = linear_inversion(&analytic_dataset(&chi, ANALYTIC_SHOTS));
            assert!(lin.chi.max_abs_diff(&chi.chi) < 1e-8);
        }
    }

    #[test]
    fn tp_normalization_is_idempotent_on_channels() {
        let chi = to_mat4(&depolarized(&rotation_channel(0.7, [1.0, 0.0, 0.0]), 0.8).chi);
        let n = normalize_tp(&chi).unwrap();
        assert!(from_mat4(&n).max_abs_diff(&from_mat4(&chi)) < 1e-12);
        // a scaled channel is mapped back
        let scaled: Mat4 = chi.map(|row| row.map(|z| z * 1.7));
        assert!(from_mat4(&normalize_tp(&scaled).unwrap()).max_abs_diff(&from_mat4(&chi)) < 1e-12);
    }

    #[test]
    fn cholesky_parameters_round_trip() {
        let chi = depolarized(&rotation_channel(0.4, [0.0, 0.0, 1.0]), 0.9);
        let x = chi_to_params(&to_mat4(&chi.chi));
        assert!(from_mat4(&params_to_chi(&x)).max_abs_diff(&chi.chi) < 1e-12);
    }

    #[test]
    fn mle_recovers_pauli_channels() {
        for (k, chi) in [ProcessMatrix::identity(), rotation_channel(PI, [1.0, 0.0, 0.0]), ProcessMatrix::sigma_z()]
            .into_iter()
            .enumerate()
        {
            let fit = reconstruct_process(&analytic_dataset(&chi, ANALYTIC_SHOTS)).unwrap();
            let target = [0, 1, 3][k];
            assert!((fit.element(target, target).re - 1.0).abs() < 1e-6, "{:?}", fit.chi);
            assert!(fit.chi.max_abs_diff(&chi.chi) < 1e-6, "{k} {}", fit.chi.max_abs_diff(&chi.chi));
            assert!(fit.is_physical());
        }
    }

    #[test]
    fn degenerate_and_inconsistent_data() {
        let empty = TomographyDataset { shots: 0, counts: [[[0; 2]; 3]; 4] };
        assert_eq!(reconstruct_process(&empty).unwrap_err(), TomographyError::Degenerate);
        let mut bad = analytic_dataset(&ProcessMatrix::identity(), 50);
        bad.counts[2][1][0] += 1;
        assert!(matches!(reconstruct_process(&bad), Err(TomographyError::CountMismatch { .. })));
    }

    #[test]
    fn mle_error_shrinks_with_shots() {
        let truth = depolarized(&rotation_channel(2.0, [0.0, 0.6, 0.8]), 0.85);
        let errs: Vec<f64> = [100, 1000, 10_000]
            .iter()
            .map(|&n| reconstruct_process(&analytic_dataset(&truth, n)).unwrap().chi.max_abs_diff(&truth.chi))
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    }

    #[test]
    fn bootstrap_on_noiseless_data_collapses() {
        let data = analytic_dataset(&ProcessMatrix::sigma_z(), ANALYTIC_SHOTS);
        let ci = bootstrap_errors(&data, &ProcessMatrix::sigma_z(), 100, 3).unwrap();
        assert!((ci.p84 - ci.p16).abs() < 1e-6);
        assert!((ci.p50 - 1.0).abs() < 1e-6);
        assert_eq!(
            bootstrap_errors(&data, &ProcessMatrix::sigma_z(), 10, 3).unwrap_err(),
            TomographyError::TooFewReplicates(10)
        );
    }

    #[test]
    fn bloch_images() {
        let grid = sphere_grid(50);
        for r in &grid {
            assert_abs_diff_eq!(r.iter().map(|v| v * v).sum::<f64>(), 1.0, epsilon = 1e-12);
        }
        for (a, b) in grid.iter().zip(bloch_image(&ProcessMatrix::identity(), &grid)) {
            assert!((0..3).all(|k| (a[k] - b[k]).abs() < 1e-12));
        }
        for (a, b) in grid.iter().zip(bloch_image(&ProcessMatrix::sigma_z(), &grid)) {
            assert!((b[0] + a[0]).abs() < 1e-12 && (b[1] + a[1]).abs() < 1e-12 && (b[2] - a[2]).abs() < 1e-12);
        }
        let mixed = depolarized(&ProcessMatrix::sigma_z(), 0.6);
        for b in bloch_image(&mixed, &grid) {
            assert!(b.iter().map(|v| v * v).sum::<f64>().sqrt() < 1.0 - 1e-3);
        }
    }

    #[test]
    fn json_round_trip() {
        let chi = depolarized(&rotation_channel(0.3, [0.0, 1.0, 0.0]), 0.9);
        let text = serde_json::to_string(&chi).unwrap();
        assert!(text.starts_with("{\"re\":[["));
        let back: ProcessMatrix = serde_json::from_str(&text).unwrap();
        assert_eq!(back, chi);
        let data = analytic_dataset(&chi, 50);
        let back: TomographyDataset = serde_json::from_str(&serde_json::to_string(&data).unwrap()).unwrap();
        assert_eq!(back, data);
        assert!(serde_json::from_str::<ProcessMatrix>("{\"re\":[[1.0]],\"im\":[[0.0]]}").is_err());
    }

    #[test]
    fn ideal_sequence_data_is_sigma_z() {
        // lossless adiabatic double STIRAP at φ = π acts as diag(1, −1)
        let p = SystemParams::lossless(crate::hamiltonian::mhz(47.0), crate::hamiltonian::mhz(47.0));
        let probs = simulated_probabilities(&Simulator::with_dt(2e-3), &p, 2.0).unwrap();
        let ideal = channel_probabilities(&ProcessMatrix::sigma_z());
        for i in 0..4 {
            for b in 0..3 {
                assert!((probs[i][b] - ideal[i][b]).abs() < 2e-3, "{i} {b}: {probs:?}");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn reconstruction_is_always_physical(
            plus in proptest::collection::vec(0u64..=50, 12),
        ) {
            let mut counts = [[[0u64; 2]; 3]; 4];
            for (k, &n) in plus.iter().enumerate() {
                counts[k / 3][k % 3] = [n, 50 - n];
            }
            let fit = reconstruct_process(&TomographyDataset { shots: 50, counts }).unwrap();
            prop_assert!(fit.chi.hermiticity_error() <= 1e-9);
            prop_assert!(hermitian_eigensystem(&fit.chi).unwrap().values[0] >= -1e-9);
            prop_assert!(fit.trace_preservation_error() <= 1e-6);
            let f = process_fidelity(&fit, &ProcessMatrix::sigma_z());
            prop_assert!((-1e-9..=1.0 + 1e-9).contains(&f));
        }
    }
}
