//! Dense complex linear algebra for small Hilbert spaces.
//!
//! Everything here targets dimensions up to about eight: matrices are stored
//! row-major in a flat `Vec`, products are plain triple loops and Hermitian
//! eigenproblems are solved with cyclic Jacobi rotations.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

const HERMITIAN_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("matrix is not Hermitian (max deviation {0:.3e})")]
    NotHermitian(f64),
    #[error("expected {expected} entries for a {dim}x{dim} matrix, got {got}")]
    BadEntryCount { dim: usize, expected: usize, got: usize },
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("state has zero norm")]
    ZeroNorm,
    #[error("density matrix trace is {0}, expected 1")]
    BadTrace(f64),
    #[error("density matrix has negative eigenvalue {0:.3e}")]
    NotPositive(f64),
}

/// Square complex matrix.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexMatrix {
    dim: usize,
    entries: Vec<C64>,
}

impl ComplexMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, entries: vec![ZERO; dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for k in 0..dim {
            m[(k, k)] = ONE;
        }
        m
    }

    pub fn from_entries(dim: usize, entries: Vec<C64>) -> Result<Self, LinalgError> {
        if dim == 0 {
            return Err(LinalgError::ZeroDimension);
        }
        if entries.len() != dim * dim {
            return Err(LinalgError::BadEntryCount {
                dim,
                expected: dim * dim,
                got: entries.len(),
            });
        }
        Ok(Self { dim, entries })
    }

    /// Builds a matrix from nested rows; panics on ragged input.
    pub fn from_rows<const N: usize>(rows: [[C64; N]; N]) -> Self {
        Self { dim: N, entries: rows.iter().flatten().copied().collect() }
    }

    pub fn from_diagonal(diag: &[C64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (k, &d) in diag.iter().enumerate() {
            m[(k, k)] = d;
        }
        m
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let d: Vec<C64> = diag.iter().map(|&x| C64::new(x, 0.0)).collect();
        Self::from_diagonal(&d)
    }

    /// |a⟩⟨b| for two kets of equal dimension.
    pub fn outer(a: &Ket, b: &Ket) -> Self {
        let dim = a.dim();
        assert_eq!(dim, b.dim(), "outer product of kets with different dimension");
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                m[(i, j)] = a.amplitudes[i] * b.amplitudes[j].conj();
            }
        }
        m
    }

    /// |i⟩⟨j| in dimension `dim`.
    pub fn unit(dim: usize, i: usize, j: usize) -> Self {
        let mut m = Self::zeros(dim);
        m[(i, j)] = ONE;
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[C64] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [C64] {
        &mut self.entries
    }

    pub fn into_entries(self) -> Vec<C64> {
        self.entries
    }

    pub fn adjoint(&self) -> Self {
        let d = self.dim;
        let mut m = Self::zeros(d);
        for i in 0..d {
            for j in 0..d {
                m[(j, i)] = self[(i, j)].conj();
            }
        }
        m
    }

    pub fn scale(&self, s: C64) -> Self {
        Self { dim: self.dim, entries: self.entries.iter().map(|&z| z * s).collect() }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        Self { dim: self.dim, entries: self.entries.iter().map(|&z| z * s).collect() }
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|k| self[(k, k)]).sum()
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Largest elementwise deviation from Hermiticity.
    pub fn hermiticity_error(&self) -> f64 {
        let d = self.dim;
        let mut err = 0.0f64;
        for i in 0..d {
            for j in i..d {
                err = err.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        err
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_error() <= tol
    }

    pub fn apply(&self, v: &Ket) -> Result<Ket, LinalgError> {
        check_dims(self.dim, v.dim())?;
        let d = self.dim;
        let amps = (0..d)
            .map(|i| (0..d).map(|j| self[(i, j)] * v.amplitudes[j]).sum())
            .collect();
        Ok(Ket { amplitudes: amps })
    }

    /// U·self·U†
    pub fn conjugate_by(&self, u: &Self) -> Self {
        &(u * self) * &u.adjoint()
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;

    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.entries[i * self.dim + j]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.entries[i * self.dim + j]
    }
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix({}x{}) [", self.dim, self.dim)?;
        for i in 0..self.dim {
            write!(f, "  ")?;
            for j in 0..self.dim {
                let z = self[(i, j)];
                write!(f, "{:+.6}{:+.6}i  ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

fn check_dims(a: usize, b: usize) -> Result<(), LinalgError> {
    if a == b {
        Ok(())
    } else {
        Err(LinalgError::DimensionMismatch { left: a, right: b })
    }
}

/// Standard matrix product, failing on mismatched dimensions.
pub fn matmul(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix, LinalgError> {
    check_dims(a.dim, b.dim)?;
    let d = a.dim;
    let mut out = ComplexMatrix::zeros(d);
    for i in 0..d {
        for k in 0..d {
            let aik = a.entries[i * d + k];
            if aik == ZERO {
                continue;
            }
            for j in 0..d {
                out.entries[i * d + j] += aik * b.entries[k * d + j];
            }
        }
    }
    Ok(out)
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;

    /// Panics on dimension mismatch; use [`matmul`] for a fallible product.
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        matmul(self, rhs).expect("matrix product dimension mismatch")
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;

    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.dim, rhs.dim, "matrix sum dimension mismatch");
        ComplexMatrix {
            dim: self.dim,
            entries: self.entries.iter().zip(&rhs.entries).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;

    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.dim, rhs.dim, "matrix difference dimension mismatch");
        ComplexMatrix {
            dim: self.dim,
            entries: self.entries.iter().zip(&rhs.entries).map(|(a, b)| a - b).collect(),
        }
    }
}

/// State vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ket {
    amplitudes: Vec<C64>,
}

impl Ket {
    pub fn new(amplitudes: Vec<C64>) -> Result<Self, LinalgError> {
        if amplitudes.is_empty() {
            return Err(LinalgError::ZeroDimension);
        }
        Ok(Self { amplitudes })
    }

    /// Computational basis vector |k⟩.
    pub fn basis(dim: usize, k: usize) -> Self {
        let mut amplitudes = vec![ZERO; dim];
        amplitudes[k] = ONE;
        Self { amplitudes }
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn normalized(&self) -> Result<Self, LinalgError> {
        let n = self.norm();
        if n == 0.0 {
            return Err(LinalgError::ZeroNorm);
        }
        Ok(Self { amplitudes: self.amplitudes.iter().map(|z| z / n).collect() })
    }

    pub fn is_normalized(&self) -> bool {
        (self.amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>() - 1.0).abs() <= 1e-12
    }

    /// ⟨self|other⟩
    pub fn inner(&self, other: &Ket) -> C64 {
        self.amplitudes.iter().zip(&other.amplitudes).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn scale(&self, s: C64) -> Self {
        Self { amplitudes: self.amplitudes.iter().map(|z| z * s).collect() }
    }
}

impl Index<usize> for Ket {
    type Output = C64;

    fn index(&self, k: usize) -> &C64 {
        &self.amplitudes[k]
    }
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct Eigensystem {
    pub values: Vec<f64>,
    pub vectors: Vec<Ket>,
}

/// Diagonalizes a Hermitian matrix by cyclic complex Jacobi rotations.
pub fn hermitian_eigensystem(m: &ComplexMatrix) -> Result<Eigensystem, LinalgError> {
    let err = m.hermiticity_error();
    if err > HERMITIAN_TOL * m.norm().max(1.0) {
        return Err(LinalgError::NotHermitian(err));
    }
    let d = m.dim;
    let mut a = m.clone();
    // symmetrize so the rotations see an exactly Hermitian input
    for i in 0..d {
        a[(i, i)] = C64::new(a[(i, i)].re, 0.0);
        for j in i + 1..d {
            let avg = 0.5 * (a[(i, j)] + a[(j, i)].conj());
            a[(i, j)] = avg;
            a[(j, i)] = avg.conj();
        }
    }
    let mut v = ComplexMatrix::identity(d);
    let scale = a.norm().max(f64::MIN_POSITIVE);

    for _sweep in 0..100 {
        let off: f64 = (0..d)
            .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)].norm_sqr())
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[(p, q)];
                let g = apq.norm();
                if g <= 1e-300 {
                    continue;
                }
                let phase = apq / g;
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                let theta = (aqq - app) / (2.0 * g);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // G = diag-phase · real rotation, acting in the (p, q) plane
                let gpp = C64::new(c, 0.0);
                let gpq = C64::new(s, 0.0);
                let gqp = -phase.conj() * s;
                let gqq = phase.conj() * c;
                // A ← A·G  (columns p, q)
                for k in 0..d {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = akp * gpp + akq * gqp;
                    a[(k, q)] = akp * gpq + akq * gqq;
                }
                // A ← G†·A (rows p, q)
                for k in 0..d {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = gpp.conj() * apk + gqp.conj() * aqk;
                    a[(q, k)] = gpq.conj() * apk + gqq.conj() * aqk;
                }
                a[(p, q)] = ZERO;
                a[(q, p)] = ZERO;
                for k in 0..d {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = vkp * gpp + vkq * gqp;
                    v[(k, q)] = vkp * gpq + vkq * gqq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&x, &y| a[(x, x)].re.total_cmp(&a[(y, y)].re));
    let values = order.iter().map(|&k| a[(k, k)].re).collect();
    let vectors = order
        .iter()
        .map(|&k| Ket { amplitudes: (0..d).map(|r| v[(r, k)]).collect() })
        .collect();
    Ok(Eigensystem { values, vectors })
}

/// exp(−i·h·t) for Hermitian `h`, through its eigen-decomposition.
pub fn expm_unitary(h: &ComplexMatrix, t: f64) -> Result<ComplexMatrix, LinalgError> {
    let eig = hermitian_eigensystem(h)?;
    let phases: Vec<C64> = eig.values.iter().map(|&l| (-I * l * t).exp()).collect();
    Ok(spectral_sum(&eig, &phases))
}

/// Σ_k f_k |v_k⟩⟨v_k|
pub fn spectral_sum(eig: &Eigensystem, weights: &[C64]) -> ComplexMatrix {
    let d = eig.vectors.first().map_or(0, Ket::dim);
    let mut out = ComplexMatrix::zeros(d);
    for (vec, &w) in eig.vectors.iter().zip(weights) {
        for i in 0..d {
            for j in 0..d {
                out[(i, j)] += w * vec.amplitudes[i] * vec.amplitudes[j].conj();
            }
        }
    }
    out
}

/// Hermitian, unit-trace, positive semidefinite matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityMatrix {
    matrix: ComplexMatrix,
}

impl DensityMatrix {
    pub fn new(matrix: ComplexMatrix) -> Result<Self, LinalgError> {
        let herm = matrix.hermiticity_error();
        if herm > HERMITIAN_TOL {
            return Err(LinalgError::NotHermitian(herm));
        }
        let tr = matrix.trace().re;
        if (tr - 1.0).abs() > 1e-9 {
            return Err(LinalgError::BadTrace(tr));
        }
        let min = hermitian_eigensystem(&matrix)?.values[0];
        if min < -1e-9 {
            return Err(LinalgError::NotPositive(min));
        }
        Ok(Self { matrix })
    }

    /// Wraps a matrix without validation; used by integrators whose output is
    /// checked separately.
    pub(crate) fn from_matrix_unchecked(matrix: ComplexMatrix) -> Self {
        Self { matrix }
    }

    pub fn pure(ket: &Ket) -> Result<Self, LinalgError> {
        let k = ket.normalized()?;
        Ok(Self { matrix: ComplexMatrix::outer(&k, &k) })
    }

    pub fn basis(dim: usize, k: usize) -> Self {
        Self { matrix: ComplexMatrix::unit(dim, k, k) }
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.matrix
    }

    pub fn population(&self, k: usize) -> f64 {
        self.matrix[(k, k)].re
    }

    pub fn coherence(&self, i: usize, j: usize) -> C64 {
        self.matrix[(i, j)]
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    pub fn min_eigenvalue(&self) -> f64 {
        hermitian_eigensystem(&self.matrix)
            .map(|e| e.values[0])
            .unwrap_or(f64::NEG_INFINITY)
    }

    /// U ρ U†
    pub fn transformed(&self, u: &ComplexMatrix) -> Self {
        Self { matrix: self.matrix.conjugate_by(u) }
    }
}

/// The Pauli matrices in the order (I, σx, σy, σz), basis (|0⟩, |1⟩).
pub fn pauli_basis() -> [ComplexMatrix; 4] {
    [
        ComplexMatrix::from_rows([[ONE, ZERO], [ZERO, ONE]]),
        ComplexMatrix::from_rows([[ZERO, ONE], [ONE, ZERO]]),
        ComplexMatrix::from_rows([[ZERO, -I], [I, ZERO]]),
        ComplexMatrix::from_rows([[ONE, ZERO], [ZERO, -ONE]]),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{PI, SQRT_2};

    fn random_matrix(dim: usize, rng: &mut impl Rng) -> ComplexMatrix {
        let entries = (0..dim * dim)
            .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        ComplexMatrix::from_entries(dim, entries).unwrap()
    }

    fn random_hermitian(dim: usize, rng: &mut impl Rng) -> ComplexMatrix {
        let a = random_matrix(dim, rng);
        (&a + &a.adjoint()).scale_real(0.5)
    }

    fn triple_loop(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
        let d = a.dim();
        let mut out = ComplexMatrix::zeros(d);
        for i in 0..d {
            for j in 0..d {
                let mut acc = ZERO;
                for k in 0..d {
                    acc += a[(i, k)] * b[(k, j)];
                }
                out[(i, j)] = acc;
            }
        }
        out
    }

    #[test]
    fn identity_is_neutral() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_matrix(4, &mut rng);
        let prod = matmul(&ComplexMatrix::identity(4), &a).unwrap();
        assert_eq!(prod, a);
    }

    #[test]
    fn pauli_x_squares_to_identity() {
        let x = &pauli_basis()[1];
        assert_eq!(matmul(x, x).unwrap(), ComplexMatrix::identity(2));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let a = random_matrix(3, &mut rng);
            let b = random_matrix(3, &mut rng);
            assert!(matmul(&a, &b).unwrap().max_abs_diff(&triple_loop(&a, &b)) < 1e-14);
        }
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let err = matmul(&ComplexMatrix::zeros(2), &ComplexMatrix::zeros(3)).unwrap_err();
        assert_eq!(err, LinalgError::DimensionMismatch { left: 2, right: 3 });
    }

    #[test]
    fn diagonal_spectrum() {
        let eig = hermitian_eigensystem(&ComplexMatrix::from_real_diagonal(&[3.0, 1.0, 2.0])).unwrap();
        assert_eq!(eig.values, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn pauli_x_spectrum() {
        let eig = hermitian_eigensystem(&pauli_basis()[1]).unwrap();
        assert_abs_diff_eq!(eig.values[0], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eig.values[1], 1.0, epsilon = 1e-12);
        let minus = Ket::new(vec![ONE / SQRT_2, -ONE / SQRT_2]).unwrap();
        let plus = Ket::new(vec![ONE / SQRT_2, ONE / SQRT_2]).unwrap();
        assert_abs_diff_eq!(eig.vectors[0].inner(&minus).norm(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eig.vectors[1].inner(&plus).norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn coupling_block_splits_by_rabi_frequency() {
        let omega = 2.0 * PI * 12.1;
        let h = ComplexMatrix::from_rows([
            [ZERO, C64::new(omega / 2.0, 0.0)],
            [C64::new(omega / 2.0, 0.0), ZERO],
        ]);
        let eig = hermitian_eigensystem(&h).unwrap();
        assert_abs_diff_eq!(eig.values[0], -omega / 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(eig.values[1], omega / 2.0, epsilon = 1e-9);
    }

    #[test]
    fn eigensystem_rejects_non_hermitian() {
        let m = ComplexMatrix::from_rows([[ZERO, ONE], [ZERO, ZERO]]);
        assert!(matches!(hermitian_eigensystem(&m), Err(LinalgError::NotHermitian(_))));
    }

    #[test]
    fn expm_of_zero_is_identity() {
        let u = expm_unitary(&ComplexMatrix::zeros(3), 1.7).unwrap();
        assert!(u.max_abs_diff(&ComplexMatrix::identity(3)) < 1e-15);
    }

    #[test]
    fn rabi_pi_pulse() {
        let omega = 2.3;
        let h = pauli_basis()[1].scale_real(omega / 2.0);
        let u = expm_unitary(&h, PI / omega).unwrap();
        let expected = pauli_basis()[1].scale(-I);
        assert!(u.max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn expm_rejects_non_hermitian() {
        let m = ComplexMatrix::from_rows([[ZERO, ONE], [ZERO, ZERO]]);
        assert!(expm_unitary(&m, 1.0).is_err());
    }

    #[test]
    fn density_matrix_validation() {
        assert!(DensityMatrix::new(ComplexMatrix::identity(2)).is_err());
        assert!(DensityMatrix::new(ComplexMatrix::identity(2).scale_real(0.5)).is_ok());
        let neg = ComplexMatrix::from_real_diagonal(&[1.5, -0.5]);
        assert!(matches!(DensityMatrix::new(neg), Err(LinalgError::NotPositive(_))));
        let nh = ComplexMatrix::from_rows([[C64::new(0.5, 0.0), ONE], [ZERO, C64::new(0.5, 0.0)]]);
        assert!(matches!(DensityMatrix::new(nh), Err(LinalgError::NotHermitian(_))));
    }

    fn hermitian_strategy(dim: usize) -> impl Strategy<Value = ComplexMatrix> {
        prop::collection::vec(-2.0f64..2.0, 2 * dim * dim).prop_map(move |xs| {
            let entries = xs.chunks(2).map(|c| C64::new(c[0], c[1])).collect();
            let a = ComplexMatrix::from_entries(dim, entries).unwrap();
            (&a + &a.adjoint()).scale_real(0.5)
        })
    }

    proptest! {
        #[test]
        fn eigensystem_reconstructs_input(m in (1usize..=8).prop_flat_map(hermitian_strategy)) {
            let eig = hermitian_eigensystem(&m).unwrap();
            let weights: Vec<C64> = eig.values.iter().map(|&l| C64::new(l, 0.0)).collect();
            prop_assert!(spectral_sum(&eig, &weights).max_abs_diff(&m) < 1e-8);
            let scale = m.norm().max(1.0);
            for (l, v) in eig.values.iter().zip(&eig.vectors) {
                let mv = m.apply(v).unwrap();
                let resid = mv.amplitudes().iter().zip(v.amplitudes())
                    .map(|(a, b)| (a - b * l).norm_sqr()).sum::<f64>().sqrt();
                prop_assert!(resid < 1e-9 * scale);
            }
            for (i, a) in eig.vectors.iter().enumerate() {
                for (j, b) in eig.vectors.iter().enumerate() {
                    let expected = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((a.inner(b) - expected).norm() < 1e-9);
                }
            }
            prop_assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
        }

        #[test]
        fn expm_is_a_one_parameter_group(m in hermitian_strategy(3), t1 in -2.0f64..2.0, t2 in -2.0f64..2.0) {
            let u1 = expm_unitary(&m, t1).unwrap();
            let u2 = expm_unitary(&m, t2).unwrap();
            let u12 = expm_unitary(&m, t1 + t2).unwrap();
            prop_assert!((&u1 * &u2).max_abs_diff(&u12) < 1e-9);
        }

        #[test]
        fn expm_is_unitary(m in hermitian_strategy(3), t in -3.0f64..3.0) {
            let u = expm_unitary(&m, t).unwrap();
            prop_assert!((&u.adjoint() * &u).max_abs_diff(&ComplexMatrix::identity(3)) < 1e-9);
        }
    }

    #[test]
    fn random_hermitian_unitarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = random_hermitian(3, &mut rng);
        let u = expm_unitary(&h, 0.9).unwrap();
        assert!((&u.adjoint() * &u).max_abs_diff(&ComplexMatrix::identity(3)) < 1e-9);
    }
}
