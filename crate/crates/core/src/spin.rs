// Copyright 2026 The QPF Contributors
// SPDX-License-Identifier: Apache-2.0

//! Spin-I angular momentum operators and the quadrupole-nucleus Hamiltonian
//! in the frame rotating with the RF carrier.
//!
//! The basis is ordered `m = I, I-1, ..., -I`, so row 0 is the highest
//! projection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{ComplexMatrix, HermitianEigenSystem, C64};

pub const MIN_DIM: usize = 2;
pub const MAX_DIM: usize = 8;

pub fn check_dimension(d: usize) -> Result<()> {
    if (MIN_DIM..=MAX_DIM).contains(&d) {
        Ok(())
    } else {
        Err(Error::UnsupportedDimension(d))
    }
}

/// `(Ix, Iy, Iz)` for a spin with `d = 2I + 1` levels.
pub fn spin_operators(d: usize) -> Result<(ComplexMatrix, ComplexMatrix, ComplexMatrix)> {
    check_dimension(d)?;
    let spin = (d as f64 - 1.0) / 2.0;
    let m = |i: usize| spin - i as f64;

    let iz = ComplexMatrix::from_real_diagonal(&(0..d).map(m).collect::<Vec<_>>());
    // <m+1| I+ |m> sits at (row of m+1, col of m) = (i-1, i).
    let mut raise = ComplexMatrix::zeros(d, d);
    for i in 1..d {
        let mi = m(i);
        raise[(i - 1, i)] = C64::new((spin * (spin + 1.0) - mi * (mi + 1.0)).sqrt(), 0.0);
    }
    let lower = raise.adjoint();
    let ix = (&raise + &lower).scale_real(0.5);
    let iy = (&raise - &lower).scale(C64::new(0.0, -0.5));
    Ok((ix, iy, iz))
}

/// Quadrupole nucleus driven by two transverse RF quadratures.
#[derive(Debug, Clone)]
pub struct SpinSystem {
    d: usize,
    q: f64,
    detuning: f64,
    ix: ComplexMatrix,
    iy: ComplexMatrix,
    iz: ComplexMatrix,
    drift: ComplexMatrix,
}

/// The serializable identity of a [`SpinSystem`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinParams {
    pub d: usize,
    pub q: f64,
    pub detuning: f64,
}

impl SpinSystem {
    /// Resonant system with `q = 1`, which fixes the time unit to `1/q`.
    pub fn new(d: usize) -> Result<Self> {
        Self::with_params(d, 1.0, 0.0)
    }

    pub fn with_params(d: usize, q: f64, detuning: f64) -> Result<Self> {
        let (ix, iy, iz) = spin_operators(d)?;
        if !q.is_finite() || !detuning.is_finite() {
            return Err(Error::InvalidConfig("q and detuning must be finite".into()));
        }
        let spin = (d as f64 - 1.0) / 2.0;
        let casimir = spin * (spin + 1.0);
        let diag: Vec<f64> = (0..d)
            .map(|i| {
                let m = spin - i as f64;
                detuning * m + q * (m * m - casimir / 3.0)
            })
            .collect();
        Ok(Self {
            d,
            q,
            detuning,
            ix,
            iy,
            iz,
            drift: ComplexMatrix::from_real_diagonal(&diag),
        })
    }

    pub fn from_params(p: SpinParams) -> Result<Self> {
        Self::with_params(p.d, p.q, p.detuning)
    }

    pub fn params(&self) -> SpinParams {
        SpinParams {
            d: self.d,
            q: self.q,
            detuning: self.detuning,
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Spin quantum number `I = (d - 1) / 2`.
    pub fn spin(&self) -> f64 {
        (self.d as f64 - 1.0) / 2.0
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn detuning(&self) -> f64 {
        self.detuning
    }

    pub fn ix(&self) -> &ComplexMatrix {
        &self.ix
    }

    pub fn iy(&self) -> &ComplexMatrix {
        &self.iy
    }

    pub fn iz(&self) -> &ComplexMatrix {
        &self.iz
    }

    /// Control operators in `(x, y)` order.
    pub fn controls(&self) -> [&ComplexMatrix; 2] {
        [&self.ix, &self.iy]
    }

    /// `detuning * Iz + q (Iz^2 - I(I+1)/3)`, diagonal.
    pub fn drift_hamiltonian(&self) -> &ComplexMatrix {
        &self.drift
    }

    /// The drift is diagonal in the computational basis, so its spectrum is
    /// available without a solver.
    pub fn drift_eigensystem(&self) -> HermitianEigenSystem {
        let mut order: Vec<usize> = (0..self.d).collect();
        order.sort_by(|&a, &b| self.drift[(a, a)].re.total_cmp(&self.drift[(b, b)].re));
        HermitianEigenSystem {
            eigenvalues: order.iter().map(|&k| self.drift[(k, k)].re).collect(),
            eigenvectors: ComplexMatrix::from_fn(self.d, self.d, |i, j| {
                if i == order[j] {
                    C64::new(1.0, 0.0)
                } else {
                    C64::new(0.0, 0.0)
                }
            }),
        }
    }

    /// `H0 + ux Ix + uy Iy`.
    pub fn total_hamiltonian(&self, ux: f64, uy: f64) -> Result<ComplexMatrix> {
        if !ux.is_finite() {
            return Err(Error::NonFiniteAmplitude(ux));
        }
        if !uy.is_finite() {
            return Err(Error::NonFiniteAmplitude(uy));
        }
        let mut h = self.drift.clone();
        h.add_scaled(ux, &self.ix);
        h.add_scaled(uy, &self.iy);
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn spin_half_is_half_pauli() {
        let (ix, iy, iz) = spin_operators(2).unwrap();
        let ex = ComplexMatrix::from_row_major(2, 2, vec![c(0., 0.), c(0.5, 0.), c(0.5, 0.), c(0., 0.)]);
        let ey = ComplexMatrix::from_row_major(2, 2, vec![c(0., 0.), c(0., -0.5), c(0., 0.5), c(0., 0.)]);
        let ez = ComplexMatrix::from_real_diagonal(&[0.5, -0.5]);
        assert!(ix.relative_distance(&ex) < 1e-15);
        assert!(iy.relative_distance(&ey) < 1e-15);
        assert!(iz.relative_distance(&ez) < 1e-15);
    }

    #[test]
    fn spin_one_by_hand() {
        let (ix, _, iz) = spin_operators(3).unwrap();
        assert!(iz.relative_distance(&ComplexMatrix::from_real_diagonal(&[1.0, 0.0, -1.0])) < 1e-15);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let z = c(0., 0.);
        let ex = ComplexMatrix::from_row_major(
            3,
            3,
            vec![z, c(r, 0.), z, c(r, 0.), z, c(r, 0.), z, c(r, 0.), z],
        );
        assert!(ix.relative_distance(&ex) < 1e-15);
    }

    #[test]
    fn algebra_holds_for_all_dimensions() {
        for d in MIN_DIM..=MAX_DIM {
            let (ix, iy, iz) = spin_operators(d).unwrap();
            let i = c(0.0, 1.0);
            assert!((&ix.commutator(&iy) - &iz.scale(i)).frobenius_norm() < 1e-12, "d={d}");
            assert!((&iy.commutator(&iz) - &ix.scale(i)).frobenius_norm() < 1e-12, "d={d}");
            assert!((&iz.commutator(&ix) - &iy.scale(i)).frobenius_norm() < 1e-12, "d={d}");
            let spin = (d as f64 - 1.0) / 2.0;
            let cas = &(&(&ix * &ix) + &(&iy * &iy)) + &(&iz * &iz);
            let expected = ComplexMatrix::identity(d).scale_real(spin * (spin + 1.0));
            assert!((&cas - &expected).frobenius_norm() < 1e-12, "d={d}");
            for op in [&ix, &iy, &iz] {
                assert!(op.hermiticity_defect() < 1e-14);
            }
            let sys = SpinSystem::new(d).unwrap();
            assert!(sys.drift_hamiltonian().trace().norm() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert_eq!(spin_operators(1).unwrap_err(), Error::UnsupportedDimension(1));
        assert_eq!(SpinSystem::new(9).unwrap_err(), Error::UnsupportedDimension(9));
    }

    #[test]
    fn drift_examples() {
        let h2 = SpinSystem::new(2).unwrap();
        assert!(h2.drift_hamiltonian().frobenius_norm() < 1e-15);
        let h3 = SpinSystem::new(3).unwrap();
        let e3 = ComplexMatrix::from_real_diagonal(&[1.0 / 3.0, -2.0 / 3.0, 1.0 / 3.0]);
        assert!((h3.drift_hamiltonian() - &e3).frobenius_norm() < 1e-15);
        let h4 = SpinSystem::new(4).unwrap();
        let e4 = ComplexMatrix::from_real_diagonal(&[1.0, -1.0, -1.0, 1.0]);
        assert!((h4.drift_hamiltonian() - &e4).frobenius_norm() < 1e-15);
    }

    #[test]
    fn detuned_drift_adds_zeeman_term() {
        let sys = SpinSystem::with_params(3, 2.0, 0.5).unwrap();
        let e = ComplexMatrix::from_real_diagonal(&[0.5 + 2.0 / 3.0, -4.0 / 3.0, -0.5 + 2.0 / 3.0]);
        assert!((sys.drift_hamiltonian() - &e).frobenius_norm() < 1e-15);
    }

    #[test]
    fn total_hamiltonian_examples() {
        let sys = SpinSystem::new(3).unwrap();
        assert_eq!(&sys.total_hamiltonian(0.0, 0.0).unwrap(), sys.drift_hamiltonian());
        let h = sys.total_hamiltonian(1.0, 1.0).unwrap();
        let expected = &(sys.drift_hamiltonian() + sys.ix()) + sys.iy();
        for (a, b) in h.entries().iter().zip(expected.entries()) {
            assert_eq!(a, b);
        }
        assert!(h.hermiticity_defect() < 1e-15);

        let s2 = SpinSystem::with_params(2, 3.3, 0.0).unwrap();
        let h2 = s2.total_hamiltonian(1.0, 0.0).unwrap();
        assert!((&h2 - s2.ix()).frobenius_norm() < 1e-15);

        assert!(matches!(
            sys.total_hamiltonian(f64::NAN, 0.0),
            Err(Error::NonFiniteAmplitude(_))
        ));
    }

    #[test]
    fn total_hamiltonian_is_linear_in_controls() {
        let sys = SpinSystem::new(5).unwrap();
        let h0 = sys.drift_hamiltonian();
        let hu = &sys.total_hamiltonian(0.7, -1.3).unwrap() - h0;
        let hau = &sys.total_hamiltonian(2.5 * 0.7, 2.5 * -1.3).unwrap() - h0;
        assert!((&hau - &hu.scale_real(2.5)).frobenius_norm() < 1e-14);
    }

    #[test]
    fn drift_eigensystem_matches_solver() {
        let sys = SpinSystem::with_params(6, 1.0, 0.3).unwrap();
        let es = sys.drift_eigensystem();
        assert!(es.reconstruct().relative_distance(sys.drift_hamiltonian()) < 1e-15);
    }
}
