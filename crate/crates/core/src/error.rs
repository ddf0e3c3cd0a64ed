// Copyright 2026 The QPF Contributors
// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

/// Errors raised anywhere in the pulse-synthesis pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not Hermitian (relative deviation {0:.3e})")]
    NonHermitianInput(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unsupported dimension d = {0} (supported: 2..=8)")]
    UnsupportedDimension(usize),

    #[error("non-finite or divergent control amplitude {0}")]
    NonFiniteAmplitude(f64),

    #[error("phase {0} rad is not in the admissible phase set")]
    PhaseNotAdmissible(f64),

    #[error("phase is ambiguous: two admissible phases are equally close")]
    AmbiguousPhase,

    #[error("gate error {0:.3e} too large to attribute a phase class")]
    UnclassifiableGate(f64),

    #[error("invalid guess specification: {0}")]
    InvalidSpec(String),

    #[error("invalid duration: {0}")]
    InvalidDuration(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("corrupt archive: {0}")]
    CorruptArchive(String),

    #[error("unknown archive schema version {0}")]
    VersionMismatch(u64),

    #[error("no grid point passes threshold {0:e}")]
    NoPassingPoint(f64),

    #[error("storage unavailable: {0}")]
    StorageUnavailable(String),
}

pub type Result<T> = std::result::Result<T, Error>;
