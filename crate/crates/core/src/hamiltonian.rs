//! Rotating-wave coupling of the ladder |0⟩ ↔ |e⟩ ↔ |r⟩.
//!
//! Units: angular frequencies in rad/μs, times in μs, ħ = 1. A detuning is
//! positive when the laser is red-detuned from its transition.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{ComplexMatrix, Ket, ZERO};

/// Converts a frequency in MHz to an angular frequency in rad/μs.
pub fn mhz(f: f64) -> f64 {
    2.0 * PI * f
}

/// Converts an angular frequency in rad/μs to a frequency in MHz.
pub fn to_mhz(w: f64) -> f64 {
    w / (2.0 * PI)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("{name} must be non-negative, got {value}")]
    Negative { name: &'static str, value: f64 },
    #[error("{name} must be finite, got {value}")]
    NotFinite { name: &'static str, value: f64 },
    #[error("Rydberg lifetime must be positive, got {0}")]
    BadLifetime(f64),
    #[error("branching fractions out of {source_level} sum to {sum}, expected 1")]
    BranchSum { source_level: &'static str, sum: f64 },
    #[error("Rydberg recycling fraction to |0> is {0}, must lie in [0, 0.07]")]
    RecyclingTooLarge(f64),
    #[error("dark state needs a nonzero Rabi frequency")]
    NoCoupling,
    #[error("dark state needs two-photon resonance (delta_p + delta_s = {0})")]
    OffResonance(f64),
}

/// Physical parameters of the driven ion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Pump Rabi frequency Ω_P.
    pub omega_p: f64,
    /// Stokes Rabi frequency Ω_S.
    pub omega_s: f64,
    pub delta_p: f64,
    pub delta_s: f64,
    /// Stokes phase φ in radians.
    pub phi: f64,
    /// Natural linewidth of |e⟩.
    pub gamma_e: f64,
    /// Rydberg lifetime in μs; `f64::INFINITY` disables Rydberg decay.
    pub tau_r: f64,
    pub gamma_laser_p: f64,
    pub gamma_laser_s: f64,
    pub branch_e_to_s_minus: f64,
    pub branch_e_to_s_plus: f64,
    pub branch_r_to_s_minus: f64,
    pub branch_r_to_s_plus: f64,
    /// Fraction of Rydberg decay returning to |0⟩.
    pub branch_r_to_d: f64,
    /// Light shift on |1⟩ at full Stokes intensity.
    pub stark_1: f64,
}

impl SystemParams {
    /// Published operating point for STIRAP: matched 2π×47 MHz Rabi
    /// frequencies, 2π×4.5 MHz |e⟩ linewidth, 2.3 μs Rydberg lifetime and
    /// 2π×100 kHz laser linewidths, all on resonance.
    pub fn paper() -> Self {
        Self {
            omega_p: mhz(47.0),
            omega_s: mhz(47.0),
            delta_p: 0.0,
            delta_s: 0.0,
            phi: 0.0,
            gamma_e: mhz(4.5),
            tau_r: 2.3,
            gamma_laser_p: mhz(0.1),
            gamma_laser_s: mhz(0.1),
            branch_e_to_s_minus: 0.5,
            branch_e_to_s_plus: 0.5,
            branch_r_to_s_minus: 0.5,
            branch_r_to_s_plus: 0.5,
            branch_r_to_d: 0.0,
            stark_1: 0.0,
        }
    }

    /// Coherent limit: no decay and no laser linewidth.
    pub fn lossless(omega_p: f64, omega_s: f64) -> Self {
        Self {
            omega_p,
            omega_s,
            gamma_e: 0.0,
            tau_r: f64::INFINITY,
            gamma_laser_p: 0.0,
            gamma_laser_s: 0.0,
            ..Self::paper()
        }
    }

    pub fn with_linewidths(mut self, gamma: f64) -> Self {
        self.gamma_laser_p = gamma;
        self.gamma_laser_s = gamma;
        self
    }

    /// Decay rate out of |r⟩ in 1/μs.
    pub fn rydberg_decay_rate(&self) -> f64 {
        if self.tau_r.is_infinite() {
            0.0
        } else {
            1.0 / self.tau_r
        }
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        let finite = [
            ("omega_p", self.omega_p),
            ("omega_s", self.omega_s),
            ("delta_p", self.delta_p),
            ("delta_s", self.delta_s),
            ("phi", self.phi),
            ("gamma_e", self.gamma_e),
            ("gamma_laser_p", self.gamma_laser_p),
            ("gamma_laser_s", self.gamma_laser_s),
            ("stark_1", self.stark_1),
        ];
        for (name, value) in finite {
            if !value.is_finite() {
                return Err(ParamError::NotFinite { name, value });
            }
        }
        let non_negative = [
            ("omega_p", self.omega_p),
            ("omega_s", self.omega_s),
            ("gamma_e", self.gamma_e),
            ("gamma_laser_p", self.gamma_laser_p),
            ("gamma_laser_s", self.gamma_laser_s),
            ("branch_e_to_s_minus", self.branch_e_to_s_minus),
            ("branch_e_to_s_plus", self.branch_e_to_s_plus),
            ("branch_r_to_s_minus", self.branch_r_to_s_minus),
            ("branch_r_to_s_plus", self.branch_r_to_s_plus),
            ("branch_r_to_d", self.branch_r_to_d),
        ];
        for (name, value) in non_negative {
            if value < 0.0 {
                return Err(ParamError::Negative { name, value });
            }
        }
        if self.tau_r.is_nan() || self.tau_r <= 0.0 {
            return Err(ParamError::BadLifetime(self.tau_r));
        }
        let e_sum = self.branch_e_to_s_minus + self.branch_e_to_s_plus;
        if (e_sum - 1.0).abs() > 1e-12 {
            return Err(ParamError::BranchSum { source_level: "|e>", sum: e_sum });
        }
        let r_sum = self.branch_r_to_s_minus + self.branch_r_to_s_plus + self.branch_r_to_d;
        if (r_sum - 1.0).abs() > 1e-12 {
            return Err(ParamError::BranchSum { source_level: "|r>", sum: r_sum });
        }
        if self.branch_r_to_d > 0.07 {
            return Err(ParamError::RecyclingTooLarge(self.branch_r_to_d));
        }
        Ok(())
    }
}

impl Default for SystemParams {
    fn default() -> Self {
        Self::paper()
    }
}

/// Three-level coupling Hamiltonian in the basis (|0⟩, |e⟩, |r⟩).
#[derive(Clone, Debug, PartialEq)]
pub struct LadderHamiltonian {
    pub matrix: ComplexMatrix,
}

/// Instantaneous ladder coupling. Both drives enter as (Ω/2)·e^{iφ} above
/// the diagonal; the pump phase is zero in every sequence used here.
pub fn ladder_matrix(
    omega_p: f64,
    pump_phase: f64,
    omega_s: f64,
    stokes_phase: f64,
    delta_p: f64,
    delta_s: f64,
) -> ComplexMatrix {
    let mut h = ComplexMatrix::zeros(3);
    let p = C64::from_polar(omega_p / 2.0, pump_phase);
    let s = C64::from_polar(omega_s / 2.0, stokes_phase);
    h[(0, 1)] = p;
    h[(1, 0)] = p.conj();
    h[(1, 2)] = s;
    h[(2, 1)] = s.conj();
    h[(1, 1)] = C64::new(delta_p, 0.0);
    h[(2, 2)] = C64::new(delta_p + delta_s, 0.0);
    h
}

pub fn build_hamiltonian(p: &SystemParams) -> Result<LadderHamiltonian, ParamError> {
    p.validate()?;
    Ok(LadderHamiltonian {
        matrix: ladder_matrix(p.omega_p, 0.0, p.omega_s, p.phi, p.delta_p, p.delta_s),
    })
}

/// Normalized dark state (Ω_S e^{iφ}|0⟩ − Ω_P|r⟩)/√(Ω_P²+Ω_S²).
pub fn dark_state(p: &SystemParams) -> Result<Ket, ParamError> {
    let norm = p.omega_p.hypot(p.omega_s);
    if norm == 0.0 {
        return Err(ParamError::NoCoupling);
    }
    let detuning = p.delta_p + p.delta_s;
    if detuning.abs() > 1e-12 * (1.0 + p.delta_p.abs() + p.delta_s.abs()) {
        return Err(ParamError::OffResonance(detuning));
    }
    let amps = vec![
        C64::from_polar(p.omega_s / norm, p.phi),
        ZERO,
        C64::new(-p.omega_p / norm, 0.0),
    ];
    Ok(Ket::new(amps).expect("three amplitudes"))
}

/// Pump detunings of the two dressed-state resonances, ascending.
pub fn resonance_positions(delta_s: f64, omega_s: f64) -> (f64, f64) {
    let root = delta_s.hypot(omega_s);
    (0.5 * (-delta_s - root), 0.5 * (-delta_s + root))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::hermitian_eigensystem;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, SQRT_2};

    fn zeroed() -> SystemParams {
        SystemParams {
            omega_p: 0.0,
            omega_s: 0.0,
            ..SystemParams::lossless(0.0, 0.0)
        }
    }

    #[test]
    fn zero_params_give_zero_matrix() {
        let h = build_hamiltonian(&zeroed()).unwrap();
        assert_eq!(h.matrix, ComplexMatrix::zeros(3));
    }

    #[test]
    fn paper_rabi_frequencies_give_symmetric_tridiagonal() {
        let h = build_hamiltonian(&SystemParams::paper()).unwrap().matrix;
        let half = mhz(47.0) / 2.0;
        assert_abs_diff_eq!(h[(0, 1)].re, half, epsilon = 1e-12);
        assert_abs_diff_eq!(h[(1, 2)].re, half, epsilon = 1e-12);
        assert_eq!(h[(0, 2)], ZERO);
        assert_eq!(h[(0, 0)], ZERO);
        assert!(h.is_hermitian(0.0));
        assert_eq!(h, h.adjoint());
    }

    #[test]
    fn quarter_phase_makes_stokes_coupling_imaginary() {
        let p = SystemParams { phi: FRAC_PI_2, ..SystemParams::paper() };
        let h = build_hamiltonian(&p).unwrap().matrix;
        assert_abs_diff_eq!(h[(1, 2)].re, 0.0, epsilon = 1e-12);
        assert!(h[(1, 2)].im > 0.0);
        assert_eq!(h[(2, 1)], h[(1, 2)].conj());
    }

    #[test]
    fn detunings_on_diagonal() {
        let p = SystemParams { delta_p: 1.5, delta_s: -0.25, ..SystemParams::paper() };
        let h = build_hamiltonian(&p).unwrap().matrix;
        assert_eq!(h[(1, 1)].re, 1.5);
        assert_eq!(h[(2, 2)].re, 1.25);
    }

    #[test]
    fn dark_state_limits() {
        let pump_off = dark_state(&SystemParams::lossless(0.0, 1.0)).unwrap();
        assert_eq!(pump_off.amplitudes(), Ket::basis(3, 0).amplitudes());

        let stokes_off = dark_state(&SystemParams::lossless(1.0, 0.0)).unwrap();
        assert_abs_diff_eq!(stokes_off[2].re, -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(stokes_off[0].norm(), 0.0, epsilon = 1e-15);

        let equal = dark_state(&SystemParams::lossless(1.0, 1.0)).unwrap();
        assert_abs_diff_eq!(equal[0].re, 1.0 / SQRT_2, epsilon = 1e-15);
        assert_abs_diff_eq!(equal[2].re, -1.0 / SQRT_2, epsilon = 1e-15);
        assert!(equal.is_normalized());
    }

    #[test]
    fn dark_state_errors() {
        assert_eq!(dark_state(&zeroed()), Err(ParamError::NoCoupling));
        let off = SystemParams { delta_p: 1.0, ..SystemParams::paper() };
        assert!(matches!(dark_state(&off), Err(ParamError::OffResonance(_))));
    }

    #[test]
    fn resonance_positions_examples() {
        let (lo, hi) = resonance_positions(0.0, mhz(12.1));
        assert_abs_diff_eq!(lo, -mhz(6.05), epsilon = 1e-12);
        assert_abs_diff_eq!(hi, mhz(6.05), epsilon = 1e-12);

        let (lo, hi) = resonance_positions(3.7, 0.0);
        assert_abs_diff_eq!(lo, -3.7, epsilon = 1e-15);
        assert_abs_diff_eq!(hi, 0.0, epsilon = 1e-15);
        let (lo, hi) = resonance_positions(-3.7, 0.0);
        assert_abs_diff_eq!(lo, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(hi, 3.7, epsilon = 1e-15);

        // direct substitution: ½(−1 ± √2)
        let (lo, hi) = resonance_positions(1.0, 1.0);
        assert_abs_diff_eq!(lo, (-1.0 - SQRT_2) / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(hi, (-1.0 + SQRT_2) / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn validation_catches_bad_branching() {
        let p = SystemParams { branch_e_to_s_plus: 0.6, ..SystemParams::paper() };
        assert!(matches!(p.validate(), Err(ParamError::BranchSum { .. })));
        let p = SystemParams {
            branch_r_to_d: 0.1,
            branch_r_to_s_minus: 0.45,
            branch_r_to_s_plus: 0.45,
            ..SystemParams::paper()
        };
        assert_eq!(p.validate(), Err(ParamError::RecyclingTooLarge(0.1)));
        let p = SystemParams { gamma_e: -1.0, ..SystemParams::paper() };
        assert!(matches!(p.validate(), Err(ParamError::Negative { .. })));
        let p = SystemParams { tau_r: 0.0, ..SystemParams::paper() };
        assert!(matches!(p.validate(), Err(ParamError::BadLifetime(_))));
    }

    proptest! {
        #[test]
        fn dark_state_is_an_eigenvector(
            omega_p in 0.0f64..400.0,
            omega_s in 0.0f64..400.0,
            delta in -20.0f64..20.0,
            phi in -7.0f64..7.0,
        ) {
            prop_assume!(omega_p.hypot(omega_s) > 1e-6);
            let p = SystemParams { omega_p, omega_s, delta_p: delta, delta_s: -delta, phi, ..SystemParams::paper() };
            let h = build_hamiltonian(&p).unwrap().matrix;
            let dark = dark_state(&p).unwrap();
            prop_assert_eq!(dark[1], ZERO);
            let hv = h.apply(&dark).unwrap();
            let lambda = dark.inner(&hv);
            let resid = hv.amplitudes().iter().zip(dark.amplitudes())
                .map(|(a, b)| (a - b * lambda).norm_sqr()).sum::<f64>().sqrt();
            prop_assert!(resid <= 1e-9 * h.norm().max(1.0));
        }

        #[test]
        fn dark_state_is_two_pi_periodic(omega_p in 0.1f64..10.0, omega_s in 0.1f64..10.0, phi in -5.0f64..5.0) {
            let a = dark_state(&SystemParams { phi, ..SystemParams::lossless(omega_p, omega_s) }).unwrap();
            let b = dark_state(&SystemParams { phi: phi + 2.0 * PI, ..SystemParams::lossless(omega_p, omega_s) }).unwrap();
            for k in 0..3 {
                prop_assert!((a[k] - b[k]).norm() < 1e-12);
            }
        }

        #[test]
        fn resonances_match_lower_block_spectrum(delta_s in -100.0f64..100.0, omega_s in 0.0f64..100.0) {
            // with the pump off, a resonance is a zero of (lower block eigenvalue) as a function of Δ_P
            let (lo, hi) = resonance_positions(delta_s, omega_s);
            for dp in [lo, hi] {
                let block = ladder_matrix(0.0, 0.0, omega_s, 0.0, dp, delta_s);
                let mut lower = ComplexMatrix::zeros(2);
                for i in 0..2 { for j in 0..2 { lower[(i, j)] = block[(i + 1, j + 1)]; } }
                let eig = hermitian_eigensystem(&lower).unwrap();
                let closest = eig.values.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
                prop_assert!(closest < 1e-9 * (1.0 + delta_s.abs() + omega_s));
            }
        }
    }
}
