// Copyright 2026 The QPF Contributors
// SPDX-License-Identifier: Apache-2.0

//! Two-field monotonic (Krotov-type) optimizer for gate synthesis.
//!
//! Each iteration is a forward sweep followed by a backward sweep:
//!
//! * forward: for slices `1..=N`, `u_n = v_n + Im Tr(B(t_n)^dagger H_k U(t_n)) / lambda`
//!   where `B` is the costate propagated under the reference controls `v` and
//!   `U(t_n)` is the freshly updated state carried across slice `n` by `v_n`.
//! * backward: recompute `B(T)` from the new `U(T)`, then for slices `N..=1`,
//!   `v_n = u_n + Im Tr(B(t_n)^dagger H_k U(t_n)) / lambda`, repropagating `B`
//!   under the new `v`. Those `v` are the reference for the next iteration.
//!
//! With the Hilbert-Schmidt product `<A|B> = Tr(A^dagger B)` the fidelity
//! gradient is `dF/du_k(t_n) = (2 dt / d^2) Im Tr(B^dagger H_k U)`, so the
//! update is an ascent step with a plus sign.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gate::{FidelityMode, TargetGate};
use crate::matrix::{hs_inner, mul_into, unitary_exp, ComplexMatrix, C64};
use crate::propagation::{
    backward_trajectory, forward_trajectory, slice_propagator, terminal_weight, CostateTrajectory, Pulse,
    Trajectory,
};
use crate::spin::SpinSystem;

/// Amplitudes beyond this (units of q) abort the run: lambda is too small.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Per-step slack allowed before a rising error counts as a stall.
pub const MONOTONE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KrotovConfig {
    /// Penalty weight in units of the slice width: `lambda = lambda_over_dt * dt`.
    pub lambda_over_dt: f64,
    /// Stop once an iteration improves the error by less than this.
    pub epsilon: f64,
    pub max_iters: usize,
    pub mode: FidelityMode,
}

impl Default for KrotovConfig {
    fn default() -> Self {
        Self {
            lambda_over_dt: 200.0,
            epsilon: 1e-10,
            max_iters: 10_000,
            mode: FidelityMode::PhaseInvariant,
        }
    }
}

impl KrotovConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_over_dt > 0.0 && self.lambda_over_dt.is_finite()) {
            return Err(Error::InvalidConfig("lambda must be positive".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig("epsilon must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        Ok(())
    }

    pub fn lambda(&self, dt: f64) -> f64 {
        self.lambda_over_dt * dt
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Converged,
    MaxIters,
    Stalled,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::Converged => "converged",
            StopReason::MaxIters => "max-iters",
            StopReason::Stalled => "stalled",
        }
    }
}

impl std::str::FromStr for StopReason {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "converged" => Ok(StopReason::Converged),
            "max-iters" => Ok(StopReason::MaxIters),
            "stalled" => Ok(StopReason::Stalled),
            other => Err(Error::InvalidConfig(format!("unknown stop reason {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizationTrace {
    /// Objective error of the initial guess.
    pub initial_error: f64,
    /// Objective error after each iteration.
    pub error_history: Vec<f64>,
    /// Best pulse seen (the forward controls of `best_iteration`).
    pub final_pulse: Pulse,
    pub final_error: f64,
    /// Phase-blind gate error of `final_pulse`.
    pub final_gate_error: f64,
    pub best_iteration: usize,
    pub iterations: usize,
    pub stop_reason: StopReason,
    /// The reference controls `v` left by the last completed backward sweep.
    pub reference_controls: Pulse,
}

impl OptimizationTrace {
    /// First iteration (1-based) whose error is below `threshold`.
    pub fn iterations_to_reach(&self, threshold: f64) -> Option<usize> {
        if self.initial_error < threshold {
            return Some(0);
        }
        self.error_history.iter().position(|&e| e < threshold).map(|i| i + 1)
    }
}

/// `u_prev + Im Tr(B^dagger H_k U) / lambda`.
pub fn update_slice(u_prev: f64, b_n: &ComplexMatrix, u_n: &ComplexMatrix, hk: &ComplexMatrix, lambda: f64) -> f64 {
    u_prev + (b_n.adjoint().matmul(hk).expect("square operators").matmul(u_n).expect("square operators"))
        .trace()
        .im
        / lambda
}

/// `Im Tr(B^dagger H_k U)` for both controls, via `W = U B^dagger`.
fn control_gradients(b: &ComplexMatrix, u: &ComplexMatrix, controls: [&ComplexMatrix; 2], scratch: &mut ComplexMatrix) -> [f64; 2] {
    let b_dag = b.adjoint();
    mul_into(u, &b_dag, scratch);
    let d = b.rows();
    controls.map(|hk| {
        let mut acc = C64::new(0.0, 0.0);
        for j in 0..d {
            for l in 0..d {
                let h = hk[(j, l)];
                if h.re != 0.0 || h.im != 0.0 {
                    acc += h * scratch[(l, j)];
                }
            }
        }
        acc.im
    })
}

/// First-order gradient `dF/du_k(t_n)` of `F = |Tr(U_f^dagger U(T))|^2 / d^2`
/// by the formula above, for each slice and control. Indexed `[k][n]`.
pub fn fidelity_gradient(system: &SpinSystem, target: &TargetGate, pulse: &Pulse) -> Result<[Vec<f64>; 2]> {
    let fwd = forward_trajectory(system, pulse)?;
    let bt = target
        .matrix()
        .scale(target.overlap(fwd.final_op())?);
    let back = backward_trajectory(system, pulse, &bt)?;
    let d = system.dim();
    let scale = 2.0 * pulse.dt() / (d * d) as f64;
    let mut scratch = ComplexMatrix::zeros(d, d);
    let mut out = [Vec::with_capacity(pulse.slices()), Vec::with_capacity(pulse.slices())];
    for n in 0..pulse.slices() {
        let g = control_gradients(&back.ops[n + 1], &fwd.ops[n + 1], system.controls(), &mut scratch);
        out[0].push(scale * g[0]);
        out[1].push(scale * g[1]);
    }
    Ok(out)
}

/// Exact derivative of `F = |Tr(U_f^dagger U(T))|^2 / d^2` with respect to each
/// slice amplitude, indexed `[k][n]`.
///
/// `dP_n/du_k = -i Hbar_k P_n` with the slice-averaged control
/// `Hbar_k = int_0^dt e^{-iHs} H_k e^{iHs} ds`, which becomes `dt H_k` to first
/// order in `dt`; [`fidelity_gradient`] is that first-order form.
pub fn exact_fidelity_gradient(system: &SpinSystem, target: &TargetGate, pulse: &Pulse) -> Result<[Vec<f64>; 2]> {
    let fwd = forward_trajectory(system, pulse)?;
    let bt = target.matrix().scale(target.overlap(fwd.final_op())?);
    let back = backward_trajectory(system, pulse, &bt)?;
    let d = system.dim();
    let dt = pulse.dt();
    let scale = 2.0 / (d * d) as f64;
    let mut out = [Vec::with_capacity(pulse.slices()), Vec::with_capacity(pulse.slices())];
    for n in 0..pulse.slices() {
        let h = system.total_hamiltonian(pulse.ux()[n], pulse.uy()[n])?;
        let es = crate::matrix::hermitian_eig(&h)?;
        let v = &es.eigenvectors;
        let v_dag = v.adjoint();
        for (k, hk) in system.controls().into_iter().enumerate() {
            let mut m = &(&v_dag * hk) * v;
            for j in 0..d {
                for l in 0..d {
                    let w = es.eigenvalues[j] - es.eigenvalues[l];
                    let f = if (w * dt).abs() < 1e-8 {
                        C64::new(dt, -0.5 * w * dt * dt)
                    } else {
                        (C64::new(1.0, 0.0) - C64::from_polar(1.0, -w * dt)) / C64::new(0.0, w)
                    };
                    m[(j, l)] *= f;
                }
            }
            let hbar = &(v * &m) * &v_dag;
            let g = hs_inner(&back.ops[n + 1], &(&hbar * &fwd.ops[n + 1]))?.im;
            out[k].push(scale * g);
        }
    }
    Ok(out)
}

/// Working state between sweeps.
#[derive(Debug, Clone)]
pub struct KrotovState {
    /// Forward controls `u` of the current iteration.
    pub pulse: Pulse,
    /// Reference controls `v` (the tilde controls of the last backward sweep).
    pub reference: Pulse,
    /// `U(t_n)` under `pulse`.
    pub forward: Trajectory,
    /// `B(t_n)` under `reference`.
    pub costate: CostateTrajectory,
    /// Slice propagators of `reference`.
    reference_steps: Vec<ComplexMatrix>,
    /// Objective error of `pulse`.
    pub error: f64,
}

impl KrotovState {
    /// Iteration-zero state: `u = v = initial`, costate from `U(T)`.
    pub fn initialize(system: &SpinSystem, target: &TargetGate, initial: &Pulse, mode: FidelityMode) -> Result<Self> {
        if system.dim() != target.dim() {
            return Err(Error::DimensionMismatch {
                expected: system.dim(),
                got: target.dim(),
            });
        }
        let forward = forward_trajectory(system, initial)?;
        let error = target.mode_error(mode, forward.final_op())?;
        let c = terminal_weight(target, forward.final_op(), mode)?;
        let costate = backward_trajectory(system, initial, &target.matrix().scale(c))?;
        let reference_steps = (0..initial.slices())
            .map(|n| slice_propagator(system, initial, n))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            pulse: initial.clone(),
            reference: initial.clone(),
            forward,
            costate,
            reference_steps,
            error,
        })
    }
}

fn check_amplitude(v: f64) -> Result<f64> {
    if !v.is_finite() || v.abs() > DIVERGENCE_LIMIT {
        Err(Error::NonFiniteAmplitude(v))
    } else {
        Ok(v)
    }
}

/// Step 4: update `u` slice by slice against the previous costate.
pub fn forward_sweep(
    system: &SpinSystem,
    target: &TargetGate,
    state: &mut KrotovState,
    config: &KrotovConfig,
) -> Result<()> {
    let d = system.dim();
    let dt = state.pulse.dt();
    let lambda = config.lambda(dt);
    let controls = system.controls();
    let mut scratch = ComplexMatrix::zeros(d, d);
    let mut trial = ComplexMatrix::zeros(d, d);
    for n in 0..state.pulse.slices() {
        // State carried across slice n by the reference controls.
        mul_into(&state.reference_steps[n], &state.forward.ops[n], &mut trial);
        let g = control_gradients(&state.costate.ops[n + 1], &trial, controls, &mut scratch);
        for (k, gk) in g.into_iter().enumerate() {
            let v = state.reference.control(k)[n];
            state.pulse.control_mut(k)[n] = check_amplitude(v + gk / lambda)?;
        }
        let p = unitary_exp(
            &system.total_hamiltonian(state.pulse.ux()[n], state.pulse.uy()[n])?,
            dt,
        )?;
        let (head, tail) = state.forward.ops.split_at_mut(n + 1);
        mul_into(&p, &head[n], &mut tail[0]);
    }
    state.error = target.mode_error(config.mode, state.forward.final_op())?;
    Ok(())
}

/// Step 5: update the reference controls `v` backwards in time.
pub fn backward_sweep(
    system: &SpinSystem,
    target: &TargetGate,
    state: &mut KrotovState,
    config: &KrotovConfig,
) -> Result<()> {
    let d = system.dim();
    let n_slices = state.pulse.slices();
    let dt = state.pulse.dt();
    let lambda = config.lambda(dt);
    let controls = system.controls();
    let mut scratch = ComplexMatrix::zeros(d, d);
    let c = terminal_weight(target, state.forward.final_op(), config.mode)?;
    state.costate.ops[n_slices] = target.matrix().scale(c);
    for n in (0..n_slices).rev() {
        let g = control_gradients(&state.costate.ops[n + 1], &state.forward.ops[n + 1], controls, &mut scratch);
        for (k, gk) in g.into_iter().enumerate() {
            let u = state.pulse.control(k)[n];
            state.reference.control_mut(k)[n] = check_amplitude(u + gk / lambda)?;
        }
        let p = unitary_exp(
            &system.total_hamiltonian(state.reference.ux()[n], state.reference.uy()[n])?,
            dt,
        )?;
        let (head, tail) = state.costate.ops.split_at_mut(n + 1);
        mul_into(&p.adjoint(), &tail[0], &mut head[n]);
        state.reference_steps[n] = p;
    }
    Ok(())
}

/// Runs the iteration until the error stops improving by `epsilon`, the
/// budget runs out, or the error rises (stall). Returns the best pulse seen.
pub fn optimize(
    system: &SpinSystem,
    target: &TargetGate,
    initial: &Pulse,
    config: &KrotovConfig,
) -> Result<OptimizationTrace> {
    config.validate()?;
    if let FidelityMode::PhaseLocked(phi) = config.mode {
        if target.phase_index(phi).is_none() {
            return Err(Error::PhaseNotAdmissible(phi));
        }
    }
    let mut state = KrotovState::initialize(system, target, initial, config.mode)?;
    let initial_error = state.error;
    let mut history = Vec::new();
    let mut best = (initial_error, initial.clone(), 0usize);
    let mut previous = initial_error;
    let mut stop_reason = StopReason::MaxIters;

    for iter in 1..=config.max_iters {
        forward_sweep(system, target, &mut state, config)?;
        let err = state.error;
        history.push(err);
        if err < best.0 {
            best = (err, state.pulse.clone(), iter);
        }
        if err > previous + MONOTONE_SLACK {
            stop_reason = StopReason::Stalled;
            break;
        }
        if previous - err < config.epsilon {
            stop_reason = StopReason::Converged;
            break;
        }
        previous = err;
        if iter < config.max_iters {
            backward_sweep(system, target, &mut state, config)?;
        }
    }

    let (final_error, final_pulse, best_iteration) = best;
    let final_gate_error = if best_iteration == history.len() {
        target.gate_error(state.forward.final_op())?
    } else {
        target.gate_error(forward_trajectory(system, &final_pulse)?.final_op())?
    };
    Ok(OptimizationTrace {
        initial_error,
        iterations: history.len(),
        error_history: history,
        final_pulse,
        final_error,
        final_gate_error,
        best_iteration,
        stop_reason,
        reference_controls: state.reference,
    })
}

/// First two terms of the Krotov functional: the unnormalized fidelity
/// `|Tr(U_f^dagger U(T))|^2` and the penalty `lambda sum_k sum_n (u - v)^2 dt`.
pub fn functional_terms(
    system: &SpinSystem,
    target: &TargetGate,
    pulse: &Pulse,
    reference: &Pulse,
    lambda: f64,
) -> Result<(f64, f64)> {
    if pulse.slices() != reference.slices() {
        return Err(Error::DimensionMismatch {
            expected: pulse.slices(),
            got: reference.slices(),
        });
    }
    if (pulse.duration() - reference.duration()).abs() > 1e-12 * pulse.duration() {
        return Err(Error::InvalidDuration("pulse and reference durations differ".into()));
    }
    let fwd = forward_trajectory(system, pulse)?;
    let fidelity = hs_inner(target.matrix(), fwd.final_op())?.norm_sqr();
    let dt = pulse.dt();
    let penalty = (0..2)
        .flat_map(|k| pulse.control(k).iter().zip(reference.control(k)))
        .map(|(u, v)| (u - v).powi(2) * dt)
        .sum::<f64>()
        * lambda;
    Ok((fidelity, penalty))
}
