// Copyright 2026 The QPF Contributors
// SPDX-License-Identifier: Apache-2.0

//! Piecewise-constant time evolution of the gate and of its costate.
//!
//! Slice `n` (1-based) covers `(t_{n-1}, t_n]` and uses the amplitudes stored
//! at index `n - 1`. Its propagator is `P_n = exp(-i H(u_n) dt)`; the forward
//! trajectory obeys `U(t_n) = P_n U(t_{n-1})` and the costate runs the same
//! equation backwards, `B(t_{n-1}) = P_n^dagger B(t_n)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gate::{FidelityMode, TargetGate};
use crate::matrix::{mul_into, unitary_exp, ComplexMatrix, C64};
use crate::spin::SpinSystem;

/// Control amplitudes `u_x, u_y` (units of `q`) on `N` slices of a pulse
/// of duration `T` (units of `1/q`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    duration: f64,
    ux: Vec<f64>,
    uy: Vec<f64>,
}

impl Pulse {
    pub fn new(duration: f64, ux: Vec<f64>, uy: Vec<f64>) -> Result<Self> {
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(Error::InvalidDuration(format!("T = {duration} must be positive")));
        }
        if ux.is_empty() || ux.len() != uy.len() {
            return Err(Error::InvalidConfig(format!(
                "pulse needs matching non-empty amplitude vectors (got {} and {})",
                ux.len(),
                uy.len()
            )));
        }
        if let Some(&bad) = ux.iter().chain(&uy).find(|v| !v.is_finite()) {
            return Err(Error::NonFiniteAmplitude(bad));
        }
        Ok(Self { duration, ux, uy })
    }

    pub fn zeros(duration: f64, slices: usize) -> Result<Self> {
        Self::new(duration, vec![0.0; slices], vec![0.0; slices])
    }

    pub fn slices(&self) -> usize {
        self.ux.len()
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn dt(&self) -> f64 {
        self.duration / self.ux.len() as f64
    }

    pub fn ux(&self) -> &[f64] {
        &self.ux
    }

    pub fn uy(&self) -> &[f64] {
        &self.uy
    }

    /// Amplitudes of the control `k` (0 = x, 1 = y).
    pub fn control(&self, k: usize) -> &[f64] {
        match k {
            0 => &self.ux,
            1 => &self.uy,
            _ => panic!("control index {k} out of range"),
        }
    }

    pub(crate) fn control_mut(&mut self, k: usize) -> &mut [f64] {
        match k {
            0 => &mut self.ux,
            1 => &mut self.uy,
            _ => panic!("control index {k} out of range"),
        }
    }

    /// Same samples on a different time axis.
    pub fn with_duration(&self, duration: f64) -> Result<Self> {
        Self::new(duration, self.ux.clone(), self.uy.clone())
    }

    pub fn max_abs_amplitude(&self) -> f64 {
        self.ux
            .iter()
            .chain(&self.uy)
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// `exp(-i (H0 + ux Ix + uy Iy) dt)`.
pub fn step_propagator(system: &SpinSystem, ux: f64, uy: f64, dt: f64) -> Result<ComplexMatrix> {
    if !(dt > 0.0) {
        return Err(Error::InvalidDuration(format!("dt = {dt} must be positive")));
    }
    unitary_exp(&system.total_hamiltonian(ux, uy)?, dt)
}

/// The propagator of slice `n` (0-based index into the amplitude vectors).
pub fn slice_propagator(system: &SpinSystem, pulse: &Pulse, n: usize) -> Result<ComplexMatrix> {
    step_propagator(system, pulse.ux[n], pulse.uy[n], pulse.dt())
}

/// Forward trajectory; `ops[0] = 1`, `ops[n] = U(t_n)`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub ops: Vec<ComplexMatrix>,
}

impl Trajectory {
    /// The realized gate `U(T)`.
    pub fn final_op(&self) -> &ComplexMatrix {
        self.ops.last().expect("trajectory is never empty")
    }
}

/// Costate trajectory; `ops[N] = B(T)`, `ops[n] = B(t_n)`.
#[derive(Debug, Clone)]
pub struct CostateTrajectory {
    pub ops: Vec<ComplexMatrix>,
}

pub fn forward_trajectory(system: &SpinSystem, pulse: &Pulse) -> Result<Trajectory> {
    let d = system.dim();
    let mut ops = Vec::with_capacity(pulse.slices() + 1);
    ops.push(ComplexMatrix::identity(d));
    for n in 0..pulse.slices() {
        let p = slice_propagator(system, pulse, n)?;
        let mut next = ComplexMatrix::zeros(d, d);
        mul_into(&p, &ops[n], &mut next);
        ops.push(next);
    }
    Ok(Trajectory { ops })
}

/// Weight `c` in the terminal condition `B(T) = c U_f`.
pub fn terminal_weight(target: &TargetGate, u_t: &ComplexMatrix, mode: FidelityMode) -> Result<C64> {
    match mode {
        FidelityMode::PhaseInvariant => target.overlap(u_t),
        FidelityMode::PhaseLocked(phi) => {
            if u_t.rows() != target.dim() || u_t.cols() != target.dim() {
                return Err(Error::DimensionMismatch {
                    expected: target.dim(),
                    got: u_t.rows(),
                });
            }
            Ok(C64::from_polar(target.dim() as f64 / 2.0, phi))
        }
    }
}

/// `B(T) = U_f Tr(U_f^dagger U(T))`, or `(d/2) e^{i phi} U_f` when locked.
pub fn terminal_costate(target: &TargetGate, u_t: &ComplexMatrix, mode: FidelityMode) -> Result<ComplexMatrix> {
    Ok(target.matrix().scale(terminal_weight(target, u_t, mode)?))
}

pub fn backward_trajectory(system: &SpinSystem, pulse: &Pulse, b_t: &ComplexMatrix) -> Result<CostateTrajectory> {
    let d = system.dim();
    if b_t.rows() != d || b_t.cols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: b_t.rows(),
        });
    }
    let n_slices = pulse.slices();
    let mut ops = vec![ComplexMatrix::zeros(d, d); n_slices + 1];
    ops[n_slices] = b_t.clone();
    for n in (0..n_slices).rev() {
        let p_dag = slice_propagator(system, pulse, n)?.adjoint();
        let (head, tail) = ops.split_at_mut(n + 1);
        mul_into(&p_dag, &tail[0], &mut head[n]);
    }
    Ok(CostateTrajectory { ops })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::hs_inner;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_pulse(seed: u64, slices: usize, duration: f64, bound: f64) -> Pulse {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ux = (0..slices).map(|_| rng.random_range(-bound..bound)).collect();
        let uy = (0..slices).map(|_| rng.random_range(-bound..bound)).collect();
        Pulse::new(duration, ux, uy).unwrap()
    }

    #[test]
    fn pulse_validation() {
        assert!(Pulse::new(0.0, vec![1.0], vec![1.0]).is_err());
        assert!(Pulse::new(1.0, vec![], vec![]).is_err());
        assert!(Pulse::new(1.0, vec![1.0], vec![1.0, 2.0]).is_err());
        assert!(matches!(
            Pulse::new(1.0, vec![f64::INFINITY], vec![0.0]),
            Err(Error::NonFiniteAmplitude(_))
        ));
        let p = Pulse::zeros(2.5, 100).unwrap();
        assert!((p.dt() * 100.0 - 2.5).abs() < 1e-12);
    }

    #[test]
    fn zero_control_step_is_diagonal_phase() {
        let sys = SpinSystem::new(4).unwrap();
        let p = step_propagator(&sys, 0.0, 0.0, 0.3).unwrap();
        let h0 = sys.drift_hamiltonian();
        let e = ComplexMatrix::from_fn(4, 4, |i, j| {
            if i == j {
                C64::from_polar(1.0, -h0[(i, i)].re * 0.3)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        assert!(p.relative_distance(&e) < 1e-14);
    }

    #[test]
    fn small_step_is_first_order() {
        let sys = SpinSystem::new(3).unwrap();
        let dt = 1e-4;
        let h = sys.total_hamiltonian(0.8, -0.3).unwrap();
        let p = step_propagator(&sys, 0.8, -0.3, dt).unwrap();
        let first = &ComplexMatrix::identity(3) - &h.scale(C64::new(0.0, dt));
        let resid = (&p - &first).frobenius_norm();
        // Second-order remainder is ||H^2|| dt^2 / 2.
        let bound = (&h * &h).frobenius_norm() * dt * dt;
        assert!(resid < bound, "{resid} vs {bound}");
        assert!(resid > 0.1 * (&h * &h).frobenius_norm() * dt * dt);
    }

    #[test]
    fn step_is_special_unitary() {
        let sys = SpinSystem::new(3).unwrap();
        let p = step_propagator(&sys, 1.0, 0.0, 0.1).unwrap();
        assert!(p.unitarity_defect() < 1e-12);
        assert!((p.determinant() - C64::new(1.0, 0.0)).norm() < 1e-12);
        assert!(step_propagator(&sys, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn single_slice_trajectory() {
        let sys = SpinSystem::new(3).unwrap();
        let pulse = Pulse::new(0.7, vec![1.2], vec![-0.4]).unwrap();
        let traj = forward_trajectory(&sys, &pulse).unwrap();
        assert_eq!(traj.ops.len(), 2);
        let p = step_propagator(&sys, 1.2, -0.4, 0.7).unwrap();
        assert!(traj.final_op().relative_distance(&p) < 1e-15);
    }

    #[test]
    fn free_evolution_of_spin_one() {
        let sys = SpinSystem::new(3).unwrap();
        let traj = forward_trajectory(&sys, &Pulse::zeros(2.0, 50).unwrap()).unwrap();
        let e = ComplexMatrix::from_fn(3, 3, |i, j| match (i, j) {
            (0, 0) | (2, 2) => C64::from_polar(1.0, -2.0 / 3.0),
            (1, 1) => C64::from_polar(1.0, 4.0 / 3.0),
            _ => C64::new(0.0, 0.0),
        });
        assert!(traj.final_op().relative_distance(&e) < 1e-12);
    }

    #[test]
    fn halves_compose() {
        let sys = SpinSystem::new(4).unwrap();
        let pulse = random_pulse(5, 40, 2.0, 3.0);
        let full = forward_trajectory(&sys, &pulse).unwrap();
        let first = Pulse::new(1.0, pulse.ux()[..20].to_vec(), pulse.uy()[..20].to_vec()).unwrap();
        let second = Pulse::new(1.0, pulse.ux()[20..].to_vec(), pulse.uy()[20..].to_vec()).unwrap();
        let a = forward_trajectory(&sys, &first).unwrap();
        let b = forward_trajectory(&sys, &second).unwrap();
        let composed = b.final_op() * a.final_op();
        assert!(composed.relative_distance(full.final_op()) < 1e-11);
    }

    #[test]
    fn trajectory_is_special_unitary_throughout() {
        for d in 2..=8 {
            let sys = SpinSystem::new(d).unwrap();
            let traj = forward_trajectory(&sys, &random_pulse(d as u64, 60, 3.0, 5.0)).unwrap();
            for op in &traj.ops {
                assert!(op.unitarity_defect() < 1e-10);
            }
            assert!((traj.final_op().determinant() - C64::new(1.0, 0.0)).norm() < 1e-9);
        }
    }

    #[test]
    fn terminal_costate_examples() {
        let t = TargetGate::qft(3).unwrap();
        let b = terminal_costate(&t, t.matrix(), FidelityMode::PhaseInvariant).unwrap();
        assert!(b.relative_distance(&t.matrix().scale_real(3.0)) < 1e-15);

        // Tr(QFT_4^dagger QFT_4 Z) = Tr(Z) = 0 for Z = diag(1, -1, 1, -1)
        let t4 = TargetGate::qft(4).unwrap();
        let z = t4.matrix() * &ComplexMatrix::from_real_diagonal(&[1.0, -1.0, 1.0, -1.0]);
        assert!(t4.overlap(&z).unwrap().norm() < 1e-14);
        let b = terminal_costate(&t4, &z, FidelityMode::PhaseInvariant).unwrap();
        assert!(b.frobenius_norm() < 1e-15);

        let phi = 1.5 * PI;
        let b = terminal_costate(&t, &ComplexMatrix::identity(3), FidelityMode::PhaseLocked(phi)).unwrap();
        let e = t.matrix().scale(C64::from_polar(1.5, phi));
        assert!(b.relative_distance(&e) < 1e-15);

        assert!(terminal_costate(&t, &ComplexMatrix::identity(2), FidelityMode::PhaseInvariant).is_err());
        assert!(terminal_costate(&t, &ComplexMatrix::identity(2), FidelityMode::PhaseLocked(phi)).is_err());
    }

    #[test]
    fn backward_zero_pulse_is_reverse_phases() {
        let sys = SpinSystem::new(3).unwrap();
        let pulse = Pulse::zeros(1.0, 10).unwrap();
        let t = TargetGate::qft(3).unwrap();
        let bt = t.matrix().clone();
        let back = backward_trajectory(&sys, &pulse, &bt).unwrap();
        let h0 = [1.0 / 3.0, -2.0 / 3.0, 1.0 / 3.0];
        for n in 0..=10 {
            let remaining = (10 - n) as f64 * 0.1;
            let e = ComplexMatrix::from_fn(3, 3, |i, j| C64::from_polar(1.0, h0[i] * remaining) * bt[(i, j)]);
            assert!(back.ops[n].relative_distance(&e) < 1e-13, "n={n}");
        }
    }

    #[test]
    fn backward_from_forward_endpoint_retraces_forward() {
        let sys = SpinSystem::new(5).unwrap();
        let pulse = random_pulse(9, 30, 1.5, 4.0);
        let fwd = forward_trajectory(&sys, &pulse).unwrap();
        let back = backward_trajectory(&sys, &pulse, fwd.final_op()).unwrap();
        for (f, b) in fwd.ops.iter().zip(&back.ops) {
            assert!(b.relative_distance(f) < 1e-10);
        }
    }

    #[test]
    fn single_slice_backward() {
        let sys = SpinSystem::new(2).unwrap();
        let pulse = Pulse::new(0.5, vec![0.3], vec![0.9]).unwrap();
        let bt = ComplexMatrix::identity(2).scale(C64::new(0.0, 2.0));
        let back = backward_trajectory(&sys, &pulse, &bt).unwrap();
        let p = step_propagator(&sys, 0.3, 0.9, 0.5).unwrap();
        assert!(back.ops[0].relative_distance(&(&p.adjoint() * &bt)) < 1e-15);
    }

    #[test]
    fn overlap_of_costate_and_state_is_conserved() {
        let sys = SpinSystem::new(4).unwrap();
        let t = TargetGate::qft(4).unwrap();
        let pulse = random_pulse(2, 80, 3.0, 6.0);
        let fwd = forward_trajectory(&sys, &pulse).unwrap();
        let bt = terminal_costate(&t, fwd.final_op(), FidelityMode::PhaseInvariant).unwrap();
        let back = backward_trajectory(&sys, &pulse, &bt).unwrap();
        let reference = hs_inner(&back.ops[80], &fwd.ops[80]).unwrap();
        let norm = back.ops[80].frobenius_norm();
        for n in 0..=80 {
            let v = hs_inner(&back.ops[n], &fwd.ops[n]).unwrap();
            assert!((v - reference).norm() < 1e-9);
            assert!((back.ops[n].frobenius_norm() - norm).abs() < 1e-10);
        }
    }

    #[test]
    fn forward_then_backward_is_identity() {
        let sys = SpinSystem::new(6).unwrap();
        let pulse = random_pulse(4, 25, 1.0, 2.0);
        let m = ComplexMatrix::from_fn(6, 6, |i, j| C64::new(i as f64 - j as f64, (i * j) as f64 * 0.1));
        let mut x = m.clone();
        for n in 0..pulse.slices() {
            x = &slice_propagator(&sys, &pulse, n).unwrap() * &x;
        }
        let back = backward_trajectory(&sys, &pulse, &x).unwrap();
        assert!(back.ops[0].relative_distance(&m) < 1e-10);
    }
}
