// Copyright 2026 The QPF Contributors
// SPDX-License-Identifier: Apache-2.0

//! Target gates, their global-phase classes and the error functionals.
//!
//! A drift-free traceless Hamiltonian only generates special-unitary
//! evolutions, so a target `U_f` is reachable only as `e^{i phi} U_f` with
//! `det(e^{i phi} U_f) = 1`. Those `d` phases are `phi0 + 2 pi k / d`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{hs_inner, ComplexMatrix, C64};
use crate::spin::check_dimension;

const TWO_PI: f64 = 2.0 * PI;

/// Circular tolerance for deciding that a phase belongs to the phase set.
pub const PHASE_MATCH_TOL: f64 = 1e-9;

/// `(1/sqrt d) [delta^{jk}]` with `delta = exp(2 pi i / d)`.
pub fn qft_matrix(d: usize) -> Result<ComplexMatrix> {
    check_dimension(d)?;
    let norm = 1.0 / (d as f64).sqrt();
    Ok(ComplexMatrix::from_fn(d, d, |j, k| {
        // Reduce the exponent first so large jk do not lose phase accuracy.
        let e = (j * k) % d;
        C64::from_polar(norm, TWO_PI * e as f64 / d as f64)
    }))
}

/// Shortest signed-free distance between two angles on the circle.
pub fn circular_distance(a: f64, b: f64) -> f64 {
    let diff = (a - b).rem_euclid(TWO_PI);
    diff.min(TWO_PI - diff)
}

fn admissible_phases(matrix: &ComplexMatrix) -> (f64, Vec<f64>) {
    let d = matrix.rows();
    let theta = matrix.determinant().arg();
    let step = TWO_PI / d as f64;
    let mut phi0 = (-theta).rem_euclid(TWO_PI) / d as f64;
    // Everything in [0, step) is equivalent; pick the representative closest to 0.
    phi0 = phi0.rem_euclid(step);
    if phi0 < 1e-10 || step - phi0 < 1e-10 {
        phi0 = 0.0;
    }
    let set = (0..d).map(|k| phi0 + step * k as f64).collect();
    (phi0, set)
}

/// `(phi0, [phi0 + 2 pi k / d; k = 0..d])` for the QFT of dimension `d`.
pub fn phase_set(d: usize) -> Result<(f64, Vec<f64>)> {
    Ok(admissible_phases(&qft_matrix(d)?))
}

/// Whether an optimization pursues any phase class or one fixed class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FidelityMode {
    /// `|Tr(U_f^dagger U)|^2`, blind to the global phase.
    PhaseInvariant,
    /// `Re[e^{-i phi} Tr(U_f^dagger U)]` for a fixed admissible `phi`.
    PhaseLocked(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseClass {
    pub index: usize,
    pub phase: f64,
    /// Circular distance from `arg Tr(U_f^dagger U)` to `phase`, radians.
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct TargetGate {
    d: usize,
    matrix: ComplexMatrix,
    phi0: f64,
    phases: Vec<f64>,
}

impl TargetGate {
    pub fn qft(d: usize) -> Result<Self> {
        Self::from_unitary(qft_matrix(d)?)
    }

    /// Wraps an arbitrary unitary target.
    pub fn from_unitary(matrix: ComplexMatrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::DimensionMismatch {
                expected: matrix.rows(),
                got: matrix.cols(),
            });
        }
        check_dimension(matrix.rows())?;
        if matrix.unitarity_defect() > 1e-10 {
            return Err(Error::InvalidConfig("target matrix is not unitary".into()));
        }
        let (phi0, phases) = admissible_phases(&matrix);
        Ok(Self {
            d: matrix.rows(),
            matrix,
            phi0,
            phases,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn phi0(&self) -> f64 {
        self.phi0
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    /// `phi0 + 2 pi k / d`, for `k` taken modulo `d`.
    pub fn phase(&self, k: usize) -> f64 {
        self.phases[k % self.d]
    }

    /// `Tr(U_f^dagger U)`.
    pub fn overlap(&self, u: &ComplexMatrix) -> Result<C64> {
        hs_inner(&self.matrix, u)
    }

    /// `1 - |Tr(U_f^dagger U)|^2 / d^2`.
    pub fn gate_error(&self, u: &ComplexMatrix) -> Result<f64> {
        let tau = self.overlap(u)?;
        let d2 = (self.d * self.d) as f64;
        Ok((1.0 - tau.norm_sqr() / d2).clamp(0.0, 1.0))
    }

    /// Index of `phi` in the phase set, if it is admissible.
    pub fn phase_index(&self, phi: f64) -> Option<usize> {
        self.phases
            .iter()
            .position(|&p| circular_distance(p, phi) <= PHASE_MATCH_TOL)
    }

    /// `1 - Re[e^{-i phi} Tr(U_f^dagger U)] / d`, in `[0, 2]`.
    pub fn phase_locked_error(&self, phi: f64, u: &ComplexMatrix) -> Result<f64> {
        if self.phase_index(phi).is_none() {
            return Err(Error::PhaseNotAdmissible(phi));
        }
        let tau = self.overlap(u)?;
        let err = 1.0 - (C64::from_polar(1.0, -phi) * tau).re / self.d as f64;
        Ok(err.clamp(0.0, 2.0))
    }

    /// The objective error the optimizer drives down in `mode`.
    pub fn mode_error(&self, mode: FidelityMode, u: &ComplexMatrix) -> Result<f64> {
        match mode {
            FidelityMode::PhaseInvariant => self.gate_error(u),
            FidelityMode::PhaseLocked(phi) => self.phase_locked_error(phi, u),
        }
    }

    /// Attributes a near-target gate to the closest admissible phase class.
    pub fn classify_phase(&self, u: &ComplexMatrix) -> Result<PhaseClass> {
        let err = self.gate_error(u)?;
        if !(err < 0.5) {
            return Err(Error::UnclassifiableGate(err));
        }
        let arg = self.overlap(u)?.arg();
        let mut dists: Vec<(usize, f64)> = self
            .phases
            .iter()
            .map(|&p| circular_distance(p, arg))
            .enumerate()
            .collect();
        dists.sort_by(|a, b| a.1.total_cmp(&b.1));
        if dists.len() > 1 && (dists[1].1 - dists[0].1).abs() < 1e-6 {
            return Err(Error::AmbiguousPhase);
        }
        let (index, residual) = dists[0];
        Ok(PhaseClass {
            index,
            phase: self.phases[index],
            residual,
        })
    }

    /// Common denominator `b` such that every admissible phase is `a pi / b`.
    fn label_denominator(&self) -> Option<u64> {
        let mut den = 1u64;
        for &p in &self.phases {
            let (_, q) = pi_fraction(p)?;
            den = lcm(den, q);
        }
        Some(den)
    }

    /// Human label of the `k`-th phase, e.g. `9pi/6` for `d = 3, k = 2`.
    pub fn phase_label(&self, k: usize) -> String {
        self.label_for(self.phase(k))
    }

    pub fn phi0_label(&self) -> String {
        self.label_for(self.phi0)
    }

    fn label_for(&self, phi: f64) -> String {
        match self.label_denominator() {
            Some(den) => {
                let num = (phi / PI * den as f64).round() as i64;
                format_pi_multiple(num, den)
            }
            None => format!("{phi:.6}"),
        }
    }
}

/// Best rational `a/b` (b <= 64) with `x = a pi / b` to within 1e-9.
pub fn pi_fraction(x: f64) -> Option<(i64, u64)> {
    let r = x / PI;
    (1..=64u64).find_map(|b| {
        let a = (r * b as f64).round();
        ((r * b as f64 - a).abs() < 1e-9 * b as f64).then_some((a as i64, b))
    })
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: u64, b: u64) -> u64 {
    a / gcd(a, b) * b
}

/// Renders `num pi / den` without reducing, e.g. `pi/6`, `9pi/6`, `0`.
pub fn format_pi_multiple(num: i64, den: u64) -> String {
    let head = match num {
        0 => return "0".to_string(),
        1 => "pi".to_string(),
        -1 => "-pi".to_string(),
        n => format!("{n}pi"),
    };
    if den == 1 {
        head
    } else {
        format!("{head}/{den}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::unitary_exp;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn qft2_is_hadamard() {
        let h = qft_matrix(2).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let e = ComplexMatrix::from_row_major(
            2,
            2,
            vec![C64::new(r, 0.), C64::new(r, 0.), C64::new(r, 0.), C64::new(-r, 0.)],
        );
        assert!(h.relative_distance(&e) < 1e-15);
    }

    #[test]
    fn qft3_entry_uses_jk_exponent() {
        let f = qft_matrix(3).unwrap();
        let delta = C64::from_polar(1.0, TWO_PI / 3.0);
        let expected = delta.powu(4) / 3f64.sqrt();
        assert!((f[(2, 2)] - expected).norm() < 1e-15);
        assert!((f[(2, 2)] - delta / 3f64.sqrt()).norm() < 1e-15);
    }

    #[test]
    fn qft_is_unitary() {
        for d in 2..=8 {
            assert!(qft_matrix(d).unwrap().unitarity_defect() < 1e-12, "d={d}");
        }
        assert!(matches!(qft_matrix(9), Err(Error::UnsupportedDimension(9))));
    }

    #[test]
    fn phase_sets_match_determinants() {
        let (p2, s2) = phase_set(2).unwrap();
        assert!((p2 - PI / 2.0).abs() < 1e-12);
        assert!((s2[1] - 1.5 * PI).abs() < 1e-12);
        let (p3, s3) = phase_set(3).unwrap();
        assert!((p3 - PI / 6.0).abs() < 1e-12);
        for (a, b) in s3.iter().zip([PI / 6.0, 5.0 * PI / 6.0, 1.5 * PI]) {
            assert!((a - b).abs() < 1e-12);
        }
        let (p4, s4) = phase_set(4).unwrap();
        assert!((p4 - PI / 8.0).abs() < 1e-12);
        for (a, b) in s4.iter().zip([1.0, 5.0, 9.0, 13.0]) {
            assert!((a - b * PI / 8.0).abs() < 1e-12);
        }
        // det(QFT_6) = 1, so phi0 must come out as exactly 0.
        assert_eq!(phase_set(6).unwrap().0, 0.0);
    }

    #[test]
    fn every_phase_closes_the_determinant() {
        for d in 2..=8 {
            let t = TargetGate::qft(d).unwrap();
            assert!((0.0..=PI).contains(&t.phi0()));
            for &phi in t.phases() {
                assert!((0.0..TWO_PI).contains(&phi));
                let det = t.matrix().scale(C64::from_polar(1.0, phi)).determinant();
                assert!((det - C64::new(1.0, 0.0)).norm() < 1e-10, "d={d} phi={phi}");
            }
            let gaps: Vec<f64> = (0..d)
                .map(|k| circular_distance(t.phase(k + 1), t.phase(k)))
                .collect();
            for g in gaps {
                assert!((g - TWO_PI / d as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn labels() {
        let t3 = TargetGate::qft(3).unwrap();
        assert_eq!(t3.phi0_label(), "pi/6");
        let labels: Vec<_> = (0..3).map(|k| t3.phase_label(k)).collect();
        assert_eq!(labels, ["pi/6", "5pi/6", "9pi/6"]);
        let t2 = TargetGate::qft(2).unwrap();
        assert_eq!(t2.phase_label(1), "3pi/2");
        let t6 = TargetGate::qft(6).unwrap();
        assert_eq!(t6.phase_label(0), "0");
        // Labels share one denominator, like 9pi/6 above.
        assert_eq!(t6.phase_label(3), "3pi/3");
        let t4 = TargetGate::qft(4).unwrap();
        assert_eq!(t4.phase_label(3), "13pi/8");
    }

    #[test]
    fn gate_error_examples() {
        let t = TargetGate::qft(3).unwrap();
        assert_eq!(t.gate_error(t.matrix()).unwrap(), 0.0);
        let shifted = t.matrix().scale(C64::from_polar(1.0, 1.234));
        assert!(t.gate_error(&shifted).unwrap() < 1e-15);
        let h = TargetGate::qft(2).unwrap();
        assert!((h.gate_error(&ComplexMatrix::identity(2)).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(
            t.gate_error(&ComplexMatrix::identity(2)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn gate_error_is_phase_blind() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = TargetGate::qft(4).unwrap();
        let sys = crate::spin::SpinSystem::new(4).unwrap();
        let u = unitary_exp(&sys.total_hamiltonian(1.3, -0.4).unwrap(), 0.8).unwrap();
        let base = t.gate_error(&u).unwrap();
        for _ in 0..20 {
            let theta = rng.random_range(-10.0..10.0);
            let e = t.gate_error(&u.scale(C64::from_polar(1.0, theta))).unwrap();
            assert!((e - base).abs() < 1e-14);
        }
    }

    #[test]
    fn phase_locked_examples() {
        let t = TargetGate::qft(3).unwrap();
        for &phi in t.phases() {
            let at = t.matrix().scale(C64::from_polar(1.0, phi));
            assert!(t.phase_locked_error(phi, &at).unwrap() < 1e-15);
            assert_eq!(t.gate_error(&at).unwrap(), 0.0);
            let flipped = t.matrix().scale(C64::from_polar(1.0, phi + PI));
            assert!((t.phase_locked_error(phi, &flipped).unwrap() - 2.0).abs() < 1e-15);
        }
        let e = t.phase_locked_error(1.5 * PI, t.matrix()).unwrap();
        assert!((e - 1.0).abs() < 1e-15);
        assert!(matches!(
            t.phase_locked_error(0.3, t.matrix()),
            Err(Error::PhaseNotAdmissible(_))
        ));
    }

    #[test]
    fn classify_examples() {
        let t = TargetGate::qft(3).unwrap();
        let u = t.matrix().scale(C64::from_polar(1.0, 5.0 * PI / 6.0));
        let c = t.classify_phase(&u).unwrap();
        assert_eq!(c.index, 1);
        assert!(c.residual < 1e-14);

        let u = t.matrix().scale(C64::from_polar(1.0, 5.0 * PI / 6.0 + 0.01));
        let c = t.classify_phase(&u).unwrap();
        assert_eq!(c.index, 1);
        assert!((c.residual - 0.01).abs() < 1e-12);

        let c = t.classify_phase(t.matrix()).unwrap();
        assert_eq!(c.index, 0);
        assert!((c.residual - PI / 6.0).abs() < 1e-12);

        let far = ComplexMatrix::identity(3);
        assert!(matches!(t.classify_phase(&far), Err(Error::UnclassifiableGate(_))));
    }

    #[test]
    fn classify_ambiguous_midpoint() {
        // arg Tr = 0.5 (phi0 + phi1) sits exactly between two classes.
        let t = TargetGate::qft(3).unwrap();
        let mid = 0.5 * (t.phase(0) + t.phase(1));
        let u = t.matrix().scale(C64::from_polar(1.0, mid));
        assert_eq!(t.classify_phase(&u).unwrap_err(), Error::AmbiguousPhase);
    }

    #[test]
    fn custom_target_gets_its_own_phases() {
        let sys = crate::spin::SpinSystem::new(3).unwrap();
        let u = unitary_exp(&sys.total_hamiltonian(0.4, 0.9).unwrap(), 1.7).unwrap();
        let t = TargetGate::from_unitary(u.clone()).unwrap();
        // U is already special-unitary, so phase 0 is admissible.
        assert!(t.phase_index(0.0).is_some());
        assert!(TargetGate::from_unitary(ComplexMatrix::zeros(3, 3)).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn classify_survives_small_perturbations(
                k in 0usize..4,
                ux in -1.0f64..1.0,
                uy in -1.0f64..1.0,
                dt in 0.0f64..0.02,
            ) {
                let sys = crate::spin::SpinSystem::new(4).unwrap();
                let t = TargetGate::qft(4).unwrap();
                let v = unitary_exp(&sys.total_hamiltonian(ux, uy).unwrap(), dt).unwrap();
                prop_assume!((&v - &ComplexMatrix::identity(4)).frobenius_norm() < 0.1);
                let phi = t.phase(k);
                let u = &t.matrix().scale(C64::from_polar(1.0, phi)) * &v;
                let c = t.classify_phase(&u).unwrap();
                prop_assert_eq!(c.index, k);
            }
        }
    }
}
