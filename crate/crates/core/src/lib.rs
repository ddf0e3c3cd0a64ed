// Copyright 2026 The QPF Contributors
// SPDX-License-Identifier: Apache-2.0

//! Shaped RF pulses for the qudit Fourier transform on a quadrupole nucleus.
//!
//! The crate is layered bottom-up: [`matrix`] (dense complex kernel),
//! [`spin`] (operators and Hamiltonian), [`gate`] (targets, phase classes,
//! error functionals), [`propagation`] (piecewise-constant evolution),
//! [`krotov`] (the monotonic optimizer), [`pulse`] (guesses, continuation,
//! archives) and [`experiment`] (restart sweeps and minimum-time studies).

pub mod error;
pub mod experiment;
pub mod gate;
pub mod krotov;
pub mod matrix;
pub mod propagation;
pub mod pulse;
pub mod spin;
pub mod verify;

pub use error::{Error, Result};
pub use gate::{FidelityMode, TargetGate};
pub use krotov::{optimize, KrotovConfig, OptimizationTrace, StopReason};
pub use matrix::{ComplexMatrix, C64};
pub use propagation::Pulse;
pub use spin::SpinSystem;
