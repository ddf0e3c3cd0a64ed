// Copyright 2026 The QPF Contributors
// SPDX-License-Identifier: Apache-2.0

//! Built-in invariant checks, run by `qpf verify`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gate::TargetGate;
use crate::krotov::{exact_fidelity_gradient, fidelity_gradient};
use crate::matrix::{ComplexMatrix, C64};
use crate::propagation::{forward_trajectory, step_propagator, Pulse};
use crate::pulse::{random_spline_guess, GuessSpec};
use crate::spin::{spin_operators, SpinSystem, MAX_DIM, MIN_DIM};
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    /// `passed` iff `worst < tol`.
    fn bound(name: &'static str, worst: f64, tol: f64) -> Self {
        Self {
            name,
            passed: worst < tol,
            detail: format!("worst {worst:.3e} (tolerance {tol:.0e})"),
        }
    }

    fn failed(name: &'static str, e: crate::Error) -> Self {
        Self {
            name,
            passed: false,
            detail: e.to_string(),
        }
    }
}

fn collect(name: &'static str, tol: f64, f: impl FnOnce() -> Result<f64>) -> Check {
    match f() {
        Ok(worst) => Check::bound(name, worst, tol),
        Err(e) => Check::failed(name, e),
    }
}

/// Largest defect over `[Ix,Iy] = iIz` (cyclic), the Casimir and `Tr H0`.
pub fn operator_algebra_defect() -> Result<f64> {
    let i = C64::new(0.0, 1.0);
    let mut worst: f64 = 0.0;
    for d in MIN_DIM..=MAX_DIM {
        let (ix, iy, iz) = spin_operators(d)?;
        let spin = (d as f64 - 1.0) / 2.0;
        let casimir = &(&(&ix * &ix) + &(&iy * &iy)) + &(&iz * &iz);
        let defects = [
            (&ix.commutator(&iy) - &iz.scale(i)).frobenius_norm(),
            (&iy.commutator(&iz) - &ix.scale(i)).frobenius_norm(),
            (&iz.commutator(&ix) - &iy.scale(i)).frobenius_norm(),
            (&casimir - &ComplexMatrix::identity(d).scale_real(spin * (spin + 1.0))).frobenius_norm(),
            SpinSystem::new(d)?.drift_hamiltonian().trace().norm(),
        ];
        worst = defects.into_iter().fold(worst, f64::max);
    }
    Ok(worst)
}

/// Largest `(unitarity defect, |det - 1|)` over random slice propagators.
pub fn propagator_defects(samples_per_d: usize, seed: u64) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut unit, mut det) = (0.0f64, 0.0f64);
    for d in MIN_DIM..=MAX_DIM {
        let sys = SpinSystem::new(d)?;
        for _ in 0..samples_per_d {
            let ux = rng.random_range(-10.0..10.0);
            let uy = rng.random_range(-10.0..10.0);
            let dt = rng.random_range(1e-3..0.5);
            let p = step_propagator(&sys, ux, uy, dt)?;
            unit = unit.max(p.unitarity_defect());
            det = det.max((p.determinant() - C64::new(1.0, 0.0)).norm());
        }
    }
    Ok((unit, det))
}

/// Largest `|det(e^{i phi} QFT_d) - 1|` over every admissible phase.
pub fn phase_closure_defect() -> Result<f64> {
    let mut worst: f64 = 0.0;
    for d in MIN_DIM..=MAX_DIM {
        let t = TargetGate::qft(d)?;
        for &phi in t.phases() {
            let det = t.matrix().scale(C64::from_polar(1.0, phi)).determinant();
            worst = worst.max((det - C64::new(1.0, 0.0)).norm());
        }
    }
    Ok(worst)
}

fn fidelity(sys: &SpinSystem, target: &TargetGate, pulse: &Pulse) -> Result<f64> {
    let d = sys.dim() as f64;
    let u = forward_trajectory(sys, pulse)?;
    Ok(target.overlap(u.final_op())?.norm_sqr() / (d * d))
}

/// Central difference of `F` in `u_k(t_n)` with step `h`.
pub fn central_difference(sys: &SpinSystem, target: &TargetGate, pulse: &Pulse, k: usize, n: usize, h: f64) -> Result<f64> {
    let shifted = |delta: f64| -> Result<Pulse> {
        let mut ux = pulse.ux().to_vec();
        let mut uy = pulse.uy().to_vec();
        if k == 0 {
            ux[n] += delta;
        } else {
            uy[n] += delta;
        }
        Pulse::new(pulse.duration(), ux, uy)
    };
    Ok((fidelity(sys, target, &shifted(h)?)? - fidelity(sys, target, &shifted(-h)?)?) / (2.0 * h))
}

/// Relative gap between central differences and `grad` over random probes
/// of smooth random pulses: `(median, worst)`.
pub fn gradient_probe_stats(
    dims: &[usize],
    probes_per_d: usize,
    slices: usize,
    duration: f64,
    h: f64,
    seed: u64,
    exact: bool,
) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rel = Vec::new();
    for &d in dims {
        let sys = SpinSystem::new(d)?;
        let target = TargetGate::qft(d)?;
        let pulse = random_spline_guess(&GuessSpec::new(slices, seed.wrapping_add(d as u64)), duration)?;
        let grad = if exact {
            exact_fidelity_gradient(&sys, &target, &pulse)?
        } else {
            fidelity_gradient(&sys, &target, &pulse)?
        };
        for _ in 0..probes_per_d {
            let k = rng.random_range(0..2);
            let n = rng.random_range(0..slices);
            let fd = central_difference(&sys, &target, &pulse, k, n, h)?;
            let an = grad[k][n];
            rel.push((fd - an).abs() / fd.abs().max(an.abs()).max(1e-300));
        }
    }
    rel.sort_by(f64::total_cmp);
    Ok((rel[rel.len() / 2], *rel.last().unwrap_or(&0.0)))
}

/// Ratio of the first-order gradient's relative error at `dt` and `dt / 2`
/// for the same piecewise shape; close to 2 for an `O(dt)` form.
pub fn first_order_convergence_ratio(d: usize, slices: usize, duration: f64, seed: u64) -> Result<f64> {
    let sys = SpinSystem::new(d)?;
    let target = TargetGate::qft(d)?;
    let gap = |p: &Pulse| -> Result<f64> {
        let exact = exact_fidelity_gradient(&sys, &target, p)?;
        let approx = fidelity_gradient(&sys, &target, p)?;
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..2 {
            for (a, b) in exact[k].iter().zip(&approx[k]) {
                num += (a - b) * (a - b);
                den += a * a;
            }
        }
        Ok((num / den).sqrt())
    };
    let coarse = random_spline_guess(&GuessSpec::new(slices, seed), duration)?;
    let split = |c: &[f64]| c.iter().flat_map(|&v| [v, v]).collect::<Vec<_>>();
    let fine = Pulse::new(duration, split(coarse.ux()), split(coarse.uy()))?;
    Ok(gap(&coarse)? / gap(&fine)?)
}

pub fn run_suite() -> Vec<Check> {
    let mut checks = vec![collect("operator algebra, d = 2..8", 1e-12, operator_algebra_defect)];
    match propagator_defects(20, 1) {
        Ok((u, det)) => {
            checks.push(Check::bound("propagator unitarity", u, 1e-10));
            checks.push(Check::bound("propagator determinant", det, 1e-9));
        }
        Err(e) => {
            checks.push(Check::failed("propagator unitarity", e.clone()));
            checks.push(Check::failed("propagator determinant", e));
        }
    }
    checks.push(collect("phase-set determinant closure", 1e-10, phase_closure_defect));
    checks.push(collect("gradient vs central differences (exact slice form)", 1e-6, || {
        gradient_probe_stats(&[2, 3, 4], 20, 100, 2.5, 1e-4, 5, true).map(|(_, worst)| worst)
    }));
    checks.push(match first_order_convergence_ratio(3, 200, 2.5, 1) {
        Ok(r) => Check {
            name: "first-order gradient form converges as O(dt)",
            passed: (1.7..2.3).contains(&r),
            detail: format!("error ratio dt : dt/2 = {r:.3}"),
        },
        Err(e) => Check::failed("first-order gradient form converges as O(dt)", e),
    });
    checks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        for c in run_suite() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn central_difference_of_linear_direction() {
        // The zero pulse gives U = 1 and Tr(QFT_2) = 0, so F is stationary.
        let sys = SpinSystem::new(2).unwrap();
        let t = TargetGate::qft(2).unwrap();
        let p = Pulse::zeros(1.0, 4).unwrap();
        let g = central_difference(&sys, &t, &p, 0, 1, 1e-5).unwrap();
        let a = exact_fidelity_gradient(&sys, &t, &p).unwrap()[0][1];
        assert!((g - a).abs() < 1e-9);
    }
}
