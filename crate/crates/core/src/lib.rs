//! Simulation and analysis of STIRAP between a ground hyperfine qubit state
//! and a Rydberg level in a single trapped ion.
//!
//! Units: angular frequencies in rad/μs, times in μs, ħ = 1. Use
//! [`hamiltonian::mhz`] to convert from MHz.

pub mod experiments;
pub mod hamiltonian;
pub mod inference;
pub mod lindblad;
pub mod linalg;
pub mod pulses;
pub mod tomography;

pub use hamiltonian::{mhz, to_mhz, ParamError, SystemParams};
pub use lindblad::{build_model, evolve, evolve_with, Level, LevelModel, LindbladError, ModelError, Trajectory};
pub use linalg::{ComplexMatrix, DensityMatrix, Ket, LinalgError};
pub use pulses::{Channel, PulseError, PulseSequence, Shape};
