// Copyright 2026 The QPF Contributors
// SPDX-License-Identifier: Apache-2.0

//! Dense complex matrices and the spectral routines built on them.
//!
//! All operators in this crate are small (d <= 8), so everything is stored
//! dense in row-major order. Exponentials of Hermitian generators are taken
//! through the eigendecomposition, which is exact up to rounding at these
//! sizes and lets callers cache the spectrum of a fixed generator.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Relative Hermiticity tolerance accepted by the spectral routines.
pub const HERMITIAN_TOL: f64 = 1e-12;

#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for j in 0..self.cols {
                let z = self[(i, j)];
                write!(f, "{:+.6}{:+.6}i  ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![C64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from row-major entries. Panics if the length is wrong.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<C64>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major data has wrong length");
        Self { rows, cols, data }
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in diag.iter().enumerate() {
            m.data[i * n + i] = C64::new(v, 0.0);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn entries(&self) -> &[C64] {
        &self.data
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn scale(&self, s: C64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&z| z * s).collect(),
        }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&z| z * s).collect(),
        }
    }

    /// `self += s * other`, in place.
    pub fn add_scaled(&mut self, s: f64, other: &Self) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b * s;
        }
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// `||self - other||_F`, relative to `||other||_F` unless that is zero.
    pub fn relative_distance(&self, other: &Self) -> f64 {
        let diff = (self - other).frobenius_norm();
        let scale = other.frobenius_norm();
        if scale > 0.0 {
            diff / scale
        } else {
            diff
        }
    }

    /// Relative Frobenius deviation from Hermiticity.
    pub fn hermiticity_defect(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let n = self.rows;
        let mut diff = 0.0;
        for i in 0..n {
            for j in 0..n {
                diff += (self[(i, j)] - self[(j, i)].conj()).norm_sqr();
            }
        }
        let scale = self.frobenius_norm();
        if scale > 0.0 {
            diff.sqrt() / scale
        } else {
            diff.sqrt()
        }
    }

    /// `||A^dagger A - 1||_F`.
    pub fn unitarity_defect(&self) -> f64 {
        (&self.adjoint() * self)
            .relative_distance(&Self::identity(self.cols))
    }

    pub fn determinant(&self) -> C64 {
        assert!(self.is_square(), "determinant of a non-square matrix");
        self.to_nalgebra().determinant()
    }

    /// Product `self * rhs` with a dimension check.
    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: rhs.rows,
            });
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        mul_into(self, rhs, &mut out);
        Ok(out)
    }

    pub fn commutator(&self, other: &Self) -> Self {
        &(self * other) - &(other * self)
    }

    pub(crate) fn to_nalgebra(&self) -> DMatrix<C64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}

/// `out = a * b`; dimensions must already agree.
pub(crate) fn mul_into(a: &ComplexMatrix, b: &ComplexMatrix, out: &mut ComplexMatrix) {
    debug_assert_eq!(a.cols, b.rows);
    debug_assert_eq!((out.rows, out.cols), (a.rows, b.cols));
    let (n, m, p) = (a.rows, a.cols, b.cols);
    for i in 0..n {
        let row = &mut out.data[i * p..(i + 1) * p];
        row.fill(C64::new(0.0, 0.0));
        for k in 0..m {
            let aik = a.data[i * m + k];
            let brow = &b.data[k * p..(k + 1) * p];
            for (o, &bkj) in row.iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
}

impl std::ops::Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.cols + j]
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.cols, rhs.rows, "matrix product dimension mismatch");
        let mut out = ComplexMatrix::zeros(self.rows, rhs.cols);
        mul_into(self, rhs, &mut out);
        out
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

/// Hilbert-Schmidt inner product `Tr(A^dagger B)`.
pub fn hs_inner(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<C64> {
    if (a.rows, a.cols) != (b.rows, b.cols) {
        return Err(Error::DimensionMismatch {
            expected: a.rows * a.cols,
            got: b.rows * b.cols,
        });
    }
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| x.conj() * y).sum())
}

/// Spectrum of a Hermitian matrix: ascending eigenvalues and the matching
/// orthonormal eigenvectors stored as columns.
#[derive(Debug, Clone)]
pub struct HermitianEigenSystem {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: ComplexMatrix,
}

impl HermitianEigenSystem {
    /// `V diag(exp(-i lambda_j tau)) V^dagger`.
    pub fn exp_unitary(&self, tau: f64) -> ComplexMatrix {
        let n = self.eigenvalues.len();
        let v = &self.eigenvectors;
        let phases: Vec<C64> = self
            .eigenvalues
            .iter()
            .map(|&l| C64::from_polar(1.0, -l * tau))
            .collect();
        ComplexMatrix::from_fn(n, n, |i, j| {
            (0..n).map(|k| v[(i, k)] * phases[k] * v[(j, k)].conj()).sum()
        })
    }

    pub fn reconstruct(&self) -> ComplexMatrix {
        let n = self.eigenvalues.len();
        let v = &self.eigenvectors;
        ComplexMatrix::from_fn(n, n, |i, j| {
            (0..n)
                .map(|k| v[(i, k)] * self.eigenvalues[k] * v[(j, k)].conj())
                .sum()
        })
    }
}

pub fn hermitian_eig(h: &ComplexMatrix) -> Result<HermitianEigenSystem> {
    let defect = h.hermiticity_defect();
    if !(defect <= HERMITIAN_TOL) {
        return Err(Error::NonHermitianInput(defect));
    }
    let n = h.rows;
    let eig = nalgebra::SymmetricEigen::new(h.to_nalgebra());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let eigenvectors = ComplexMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    Ok(HermitianEigenSystem {
        eigenvalues,
        eigenvectors,
    })
}

/// `exp(-i H tau)` for Hermitian `H`.
pub fn unitary_exp(h: &ComplexMatrix, tau: f64) -> Result<ComplexMatrix> {
    Ok(hermitian_eig(h)?.exp_unitary(tau))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_hermitian(n: usize, seed: u64) -> ComplexMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = ComplexMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = c(rng.random_range(-2.0..2.0), 0.0);
            for j in i + 1..n {
                let z = c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                m[(i, j)] = z;
                m[(j, i)] = z.conj();
            }
        }
        m
    }

    // Independent of the spectral path: truncated Taylor series.
    fn series_exp(h: &ComplexMatrix, tau: f64, terms: usize) -> ComplexMatrix {
        let n = h.rows();
        let gen = h.scale(c(0.0, -tau));
        let mut term = ComplexMatrix::identity(n);
        let mut sum = ComplexMatrix::identity(n);
        for k in 1..terms {
            term = (&term * &gen).scale_real(1.0 / k as f64);
            sum = &sum + &term;
        }
        sum
    }

    #[test]
    fn eig_of_diagonal_is_sorted() {
        let h = ComplexMatrix::from_real_diagonal(&[1.0, 0.0, -1.0]);
        let es = hermitian_eig(&h).unwrap();
        assert_eq!(es.eigenvalues, vec![-1.0, 0.0, 1.0]);
        for col in 0..3 {
            let nonzero: Vec<_> = (0..3)
                .filter(|&r| es.eigenvectors[(r, col)].norm() > 1e-12)
                .collect();
            assert_eq!(nonzero.len(), 1);
            assert!((es.eigenvectors[(nonzero[0], col)].norm() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn eig_of_half_pauli_x() {
        let h = ComplexMatrix::from_row_major(2, 2, vec![c(0., 0.), c(0.5, 0.), c(0.5, 0.), c(0., 0.)]);
        let es = hermitian_eig(&h).unwrap();
        assert!((es.eigenvalues[0] + 0.5).abs() < 1e-15);
        assert!((es.eigenvalues[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn eig_reconstructs_random_8x8() {
        for seed in 0..20 {
            let h = random_hermitian(8, seed);
            let es = hermitian_eig(&h).unwrap();
            assert!(es.reconstruct().relative_distance(&h) < 1e-10);
            assert!(es.eigenvectors.unitarity_defect() < 1e-12);
            assert!(es.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
            let sum: f64 = es.eigenvalues.iter().sum();
            assert!((sum - h.trace().re).abs() < 1e-10);
        }
    }

    #[test]
    fn eig_rejects_non_hermitian() {
        let mut h = random_hermitian(3, 1);
        h[(0, 1)] += c(0.1, 0.0);
        assert!(matches!(hermitian_eig(&h), Err(Error::NonHermitianInput(_))));
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let u = unitary_exp(&ComplexMatrix::zeros(4, 4), 3.7).unwrap();
        assert!(u.relative_distance(&ComplexMatrix::identity(4)) < 1e-15);
    }

    #[test]
    fn exp_of_diagonal_at_pi() {
        let h = ComplexMatrix::from_real_diagonal(&[1.0, -1.0]);
        let u = unitary_exp(&h, PI).unwrap();
        let minus_one = ComplexMatrix::identity(2).scale_real(-1.0);
        assert!(u.relative_distance(&minus_one) < 1e-15);
    }

    #[test]
    fn exp_matches_series_and_is_unitary() {
        let h = random_hermitian(5, 7);
        let u = unitary_exp(&h, 0.3).unwrap();
        assert!(u.unitarity_defect() < 1e-12);
        assert!(u.relative_distance(&series_exp(&h, 0.3, 40)) < 1e-13);
    }

    #[test]
    fn exp_group_law_and_adjoint() {
        let h = random_hermitian(6, 3);
        let a = unitary_exp(&h, 0.4).unwrap();
        let b = unitary_exp(&h, 1.1).unwrap();
        let ab = unitary_exp(&h, 1.5).unwrap();
        assert!((&a * &b).relative_distance(&ab) < 1e-10);
        let back = unitary_exp(&h, -0.4).unwrap();
        assert!(a.adjoint().relative_distance(&back) < 1e-12);
    }

    #[test]
    fn hs_inner_basics() {
        let id = ComplexMatrix::identity(5);
        assert_eq!(hs_inner(&id, &id).unwrap(), c(5.0, 0.0));
        let x = ComplexMatrix::from_row_major(2, 2, vec![c(0., 0.), c(1., 0.), c(1., 0.), c(0., 0.)]);
        let y = ComplexMatrix::from_row_major(2, 2, vec![c(0., 0.), c(0., -1.), c(0., 1.), c(0., 0.)]);
        assert_eq!(hs_inner(&x, &y).unwrap(), c(0.0, 0.0));
        let a = random_hermitian(3, 9).scale(c(0.3, 1.2));
        let aa = hs_inner(&a, &a).unwrap();
        assert!(aa.im.abs() < 1e-14);
        assert!((aa.re - a.frobenius_norm().powi(2)).abs() < 1e-12);
        assert!(matches!(
            hs_inner(&ComplexMatrix::identity(2), &ComplexMatrix::identity(3)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn matmul_checks_dimensions() {
        let a = ComplexMatrix::zeros(2, 3);
        assert!(a.matmul(&ComplexMatrix::zeros(2, 2)).is_err());
        assert_eq!(a.matmul(&ComplexMatrix::zeros(3, 4)).unwrap().cols(), 4);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn hs_inner_is_conjugate_symmetric(seed in any::<u64>(), n in 2usize..=8) {
                let a = random_hermitian(n, seed).scale(c(0.7, -0.2));
                let b = random_hermitian(n, seed ^ 0xdead).scale(c(-0.1, 0.9));
                let ab = hs_inner(&a, &b).unwrap();
                let ba = hs_inner(&b, &a).unwrap();
                prop_assert!((ab - ba.conj()).norm() < 1e-12);
            }

            #[test]
            fn exp_is_unitary(seed in any::<u64>(), n in 2usize..=8, tau in -5.0f64..5.0) {
                let u = unitary_exp(&random_hermitian(n, seed), tau).unwrap();
                prop_assert!(u.unitarity_defect() < 1e-12);
            }
        }
    }
}
