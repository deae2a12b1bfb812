//! Binomial likelihoods with flat priors and an affine-invariant ensemble
//! sampler (stretch move, two half-ensembles).

use std::io::{self, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experiments::{solve3, stream_rng, ExperimentResult};

/// Stretch-move scale.
pub const STRETCH_A: f64 = 2.0;
pub const DEFAULT_WALKERS: usize = 32;
pub const DEFAULT_STEPS: usize = 2000;
pub const DEFAULT_BURN_IN: usize = 500;

const PROB_CLIP: f64 = 1e-9;
/// Prior draws used to locate the starting ball of the ensemble.
const INIT_DRAWS: usize = 4000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("result has no detection counts; add projection noise first")]
    NoCounts,
    #[error("need at least {needed} walkers for {dim} parameters, got {walkers}")]
    TooFewWalkers { walkers: usize, dim: usize, needed: usize },
    #[error("steps must be at least 1")]
    NoSteps,
    #[error("walker {0} starts outside the prior support")]
    OutsideSupport(usize),
    #[error("burn-in {burn_in} leaves no samples of {steps} steps")]
    EmptyChain { burn_in: usize, steps: usize },
    #[error("walker {walker} has {got} coordinates, expected {expected}")]
    BadWalker { walker: usize, got: usize, expected: usize },
    #[error("bounds ({lo}, {hi}) are empty")]
    BadBounds { lo: f64, hi: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ModelKind {
    /// A·e^{−t/τ} + C, parameters (A, τ) or (A, τ, C).
    ExpDecay { with_floor: bool },
    /// c − (C/2)·cos(φ + φ_dyn), parameters (c, C, φ_dyn).
    Fringe,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitModel {
    pub kind: ModelKind,
    pub bounds: Vec<(f64, f64)>,
}

impl FitModel {
    pub fn exp_decay(amp: (f64, f64), tau: (f64, f64)) -> Self {
        Self { kind: ModelKind::ExpDecay { with_floor: false }, bounds: vec![amp, tau] }
    }

    pub fn exp_decay_with_floor(amp: (f64, f64), tau: (f64, f64), floor: (f64, f64)) -> Self {
        Self { kind: ModelKind::ExpDecay { with_floor: true }, bounds: vec![amp, tau, floor] }
    }

    pub fn fringe(center: (f64, f64), contrast: (f64, f64), phase: (f64, f64)) -> Self {
        Self { kind: ModelKind::Fringe, bounds: vec![center, contrast, phase] }
    }

    /// Bounds used for the lifetime fit: A ∈ [0, 1], τ ∈ [0.05, 50] μs.
    pub fn lifetime_default() -> Self {
        Self::exp_decay((0.0, 1.0), (0.05, 50.0))
    }

    /// Bounds used for the fringe fit: c, C ∈ [0, 1], φ_dyn ∈ [−π, π].
    pub fn fringe_default() -> Self {
        use std::f64::consts::PI;
        Self::fringe((0.0, 1.0), (0.0, 1.0), (-PI, PI))
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn names(&self) -> Vec<&'static str> {
        match self.kind {
            ModelKind::ExpDecay { with_floor: false } => vec!["amplitude", "tau_us"],
            ModelKind::ExpDecay { with_floor: true } => vec!["amplitude", "tau_us", "floor"],
            ModelKind::Fringe => vec!["center", "contrast", "phi_dyn_rad"],
        }
    }

    pub fn in_bounds(&self, params: &[f64]) -> bool {
        params.len() == self.dim() && params.iter().zip(&self.bounds).all(|(&v, &(lo, hi))| v >= lo && v <= hi)
    }

    pub fn eval(&self, params: &[f64], x: f64) -> f64 {
        match self.kind {
            ModelKind::ExpDecay { with_floor } => {
                let floor = if with_floor { params[2] } else { 0.0 };
                params[0] * (-x / params[1]).exp() + floor
            }
            ModelKind::Fringe => params[0] - 0.5 * params[1] * (x + params[2]).cos(),
        }
    }

    fn validate(&self) -> Result<(), InferenceError> {
        for &(lo, hi) in &self.bounds {
            if !(lo < hi) {
                return Err(InferenceError::BadBounds { lo, hi });
            }
        }
        Ok(())
    }
}

/// Counts `n[k]` out of `shots` at `x[k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BinomialData {
    pub x: Vec<f64>,
    pub n: Vec<u64>,
    pub shots: u64,
}

impl TryFrom<&ExperimentResult> for BinomialData {
    type Error = InferenceError;
    fn try_from(r: &ExperimentResult) -> Result<Self, Self::Error> {
        let n = r.counts.clone().ok_or(InferenceError::NoCounts)?;
        Ok(Self { x: r.x.clone(), n, shots: r.shots })
    }
}

/// Σ_k n_k ln p_k + (N − n_k) ln(1 − p_k) inside the bounds, −∞ outside.
pub fn log_posterior(model: &FitModel, params: &[f64], data: &BinomialData) -> f64 {
    if !model.in_bounds(params) {
        return f64::NEG_INFINITY;
    }
    let shots = data.shots as f64;
    data.x
        .iter()
        .zip(&data.n)
        .map(|(&x, &n)| {
            let p = model.eval(params, x).clamp(PROB_CLIP, 1.0 - PROB_CLIP);
            let n = n as f64;
            n * p.ln() + (shots - n) * (1.0 - p).ln()
        })
        .sum()
}

pub trait LogDensity {
    fn dim(&self) -> usize;
    fn log_density(&self, x: &[f64]) -> f64;
}

pub struct Posterior<'a> {
    pub model: &'a FitModel,
    pub data: &'a BinomialData,
}

impl LogDensity for Posterior<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }
    fn log_density(&self, x: &[f64]) -> f64 {
        log_posterior(self.model, x, self.data)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Chain {
    pub walkers: usize,
    pub steps: usize,
    pub names: Vec<String>,
    /// `samples[step][walker]` is the position after that step.
    pub samples: Vec<Vec<Vec<f64>>>,
    pub log_prob: Vec<Vec<f64>>,
    pub accepted: usize,
}

impl Chain {
    pub fn acceptance_fraction(&self) -> f64 {
        self.accepted as f64 / (self.walkers * self.steps) as f64
    }

    pub fn dim(&self) -> usize {
        self.samples.first().and_then(|s| s.first()).map_or(0, Vec::len)
    }

    /// Samples of parameter `k` after `burn_in` steps, step major.
    pub fn flat(&self, k: usize, burn_in: usize) -> Vec<f64> {
        self.samples.iter().skip(burn_in).flat_map(|s| s.iter().map(move |w| w[k])).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "step,walker,{},log_posterior", self.names.join(","))?;
        for (s, (pos, lp)) in self.samples.iter().zip(&self.log_prob).enumerate() {
            for (k, (x, l)) in pos.iter().zip(lp).enumerate() {
                let vals: Vec<String> = x.iter().map(|v| v.to_string()).collect();
                writeln!(w, "{s},{k},{},{l}", vals.join(","))?;
            }
        }
        Ok(())
    }
}

/// Runs the stretch-move sampler from the given walker positions. Random
/// numbers for walker k at step s come from stream s·walkers + k, so results
/// do not depend on the order in which walkers of a half are updated.
pub fn sample_ensemble<T: LogDensity + ?Sized>(
    target: &T,
    initial: &[Vec<f64>],
    steps: usize,
    seed: u64,
) -> Result<Chain, InferenceError> {
    let dim = target.dim();
    let walkers = initial.len();
    if walkers < 2 * dim || walkers < 2 || walkers % 2 != 0 {
        return Err(InferenceError::TooFewWalkers { walkers, dim, needed: (2 * dim).max(2).next_multiple_of(2) });
    }
    if steps == 0 {
        return Err(InferenceError::NoSteps);
    }
    let mut pos = initial.to_vec();
    let mut lp = Vec::with_capacity(walkers);
    for (k, x) in pos.iter().enumerate() {
        if x.len() != dim {
            return Err(InferenceError::BadWalker { walker: k, got: x.len(), expected: dim });
        }
        let l = target.log_density(x);
        if !l.is_finite() {
            return Err(InferenceError::OutsideSupport(k));
        }
        lp.push(l);
    }

    let half = walkers / 2;
    let mut samples = Vec::with_capacity(steps);
    let mut log_prob = Vec::with_capacity(steps);
    let mut accepted = 0;
    let mut proposal = vec![0.0; dim];
    for step in 0..steps {
        for set in 0..2 {
            let (own, other) = if set == 0 { (0..half, half..walkers) } else { (half..walkers, 0..half) };
            // the other half is frozen while this half moves
            let frozen: Vec<Vec<f64>> = pos[other.clone()].to_vec();
            for k in own {
                let mut rng = stream_rng(seed, (step * walkers + k) as u64);
                let j = rng.random_range(0..frozen.len());
                let u: f64 = rng.random();
                let z = ((STRETCH_A - 1.0) * u + 1.0).powi(2) / STRETCH_A;
                for d in 0..dim {
                    proposal[d] = frozen[j][d] + z * (pos[k][d] - frozen[j][d]);
                }
                let lq = target.log_density(&proposal);
                let log_ratio = (dim as f64 - 1.0) * z.ln() + lq - lp[k];
                let r: f64 = rng.random();
                if lq.is_finite() && r.ln() < log_ratio {
                    pos[k].copy_from_slice(&proposal);
                    lp[k] = lq;
                    accepted += 1;
                }
            }
        }
        samples.push(pos.clone());
        log_prob.push(lp.clone());
    }
    Ok(Chain {
        walkers,
        steps,
        names: (0..dim).map(|d| format!("x{d}")).collect(),
        samples,
        log_prob,
        accepted,
    })
}

/// Starting ensemble: a small ball inside the bounds around the best of a
/// fixed set of prior draws.
pub fn initial_ensemble(model: &FitModel, data: &BinomialData, walkers: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stream_rng(seed, u64::MAX);
    let draw = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        model.bounds.iter().map(|&(lo, hi)| lo + (hi - lo) * rng.random::<f64>()).collect()
    };
    let mut best = draw(&mut rng);
    let mut best_lp = log_posterior(model, &best, data);
    for _ in 1..INIT_DRAWS {
        let x = draw(&mut rng);
        let l = log_posterior(model, &x, data);
        if l > best_lp {
            best = x;
            best_lp = l;
        }
    }
    (0..walkers)
        .map(|_| {
            best.iter()
                .zip(&model.bounds)
                .map(|(&c, &(lo, hi))| {
                    let w = 1e-3 * (hi - lo);
                    (c + w * (2.0 * rng.random::<f64>() - 1.0)).clamp(lo, hi)
                })
                .collect()
        })
        .collect()
}

/// Posterior sampling of `model` given binomial `data`.
pub fn sample(
    model: &FitModel,
    data: &BinomialData,
    walkers: usize,
    steps: usize,
    seed: u64,
) -> Result<Chain, InferenceError> {
    model.validate()?;
    let init = initial_ensemble(model, data, walkers, seed);
    let mut chain = sample_ensemble(&Posterior { model, data }, &init, steps, seed)?;
    chain.names = model.names().into_iter().map(String::from).collect();
    Ok(chain)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p16: f64,
    pub p50: f64,
    pub p84: f64,
}

impl Percentiles {
    pub fn contains(&self, v: f64) -> bool {
        v >= self.p16 && v <= self.p84
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.p84 - self.p16)
    }
}

/// Percentiles of the post-burn-in samples, one entry per parameter.
pub fn summarize(chain: &Chain, burn_in: usize) -> Result<Vec<Percentiles>, InferenceError> {
    if burn_in >= chain.steps {
        return Err(InferenceError::EmptyChain { burn_in, steps: chain.steps });
    }
    Ok((0..chain.dim())
        .map(|k| {
            let mut v = chain.flat(k, burn_in);
            let q = percentiles(&mut v, &[16.0, 50.0, 84.0]).expect("nonempty");
            Percentiles { p16: q[0], p50: q[1], p84: q[2] }
        })
        .collect())
}

/// Percentiles with linear interpolation between order statistics; sorts
/// `values` in place.
pub fn percentiles(values: &mut [f64], qs: &[f64]) -> Option<Vec<f64>> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let last = (values.len() - 1) as f64;
    Some(
        qs.iter()
            .map(|&q| {
                let h = last * q / 100.0;
                let lo = h.floor() as usize;
                let hi = h.ceil() as usize;
                values[lo] + (h - lo as f64) * (values[hi] - values[lo])
            })
            .collect(),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FringeFit {
    pub center: f64,
    pub contrast: f64,
    /// Wrapped to (−π, π].
    pub phi_dyn: f64,
}

/// Linear least squares of P(φ) = c + a·cos φ + b·sin φ, expressed as
/// c − (C/2)·cos(φ + φ_dyn).
pub fn fit_fringe_least_squares(phis: &[f64], p: &[f64]) -> Option<FringeFit> {
    let mut ata = [[0.0; 3]; 3];
    let mut atb = [0.0; 3];
    for (&phi, &y) in phis.iter().zip(p) {
        let row = [1.0, phi.cos(), phi.sin()];
        for r in 0..3 {
            for c in 0..3 {
                ata[r][c] += row[r] * row[c];
            }
            atb[r] += row[r] * y;
        }
    }
    let [c, a, b] = solve3(ata, atb)?;
    Some(FringeFit { center: c, contrast: 2.0 * a.hypot(b), phi_dyn: b.atan2(-a) })
}
