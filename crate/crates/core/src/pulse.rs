// Copyright 2026 The QPF Contributors
// SPDX-License-Identifier: Apache-2.0

//! Initial guesses, time continuation and the on-disk pulse archive.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::propagation::Pulse;
use crate::spin::SpinParams;

/// Random-knot guess: knots every `knot_stride` slices (plus the last slice),
/// knot values uniform in `[-amplitude_bound, amplitude_bound]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuessSpec {
    pub slices: usize,
    pub knot_stride: usize,
    pub amplitude_bound: f64,
    pub seed: u64,
}

impl GuessSpec {
    pub fn new(slices: usize, seed: u64) -> Self {
        Self {
            slices,
            knot_stride: 10,
            amplitude_bound: 10.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.slices == 0 {
            return Err(Error::InvalidSpec("slice count must be positive".into()));
        }
        if self.knot_stride == 0 || self.knot_stride > self.slices {
            return Err(Error::InvalidSpec(format!(
                "knot stride {} must lie in 1..={}",
                self.knot_stride, self.slices
            )));
        }
        if !(self.amplitude_bound > 0.0 && self.amplitude_bound.is_finite()) {
            return Err(Error::InvalidSpec("amplitude bound must be positive".into()));
        }
        Ok(())
    }

    /// Slice indices carrying random knots: `0, s, 2s, ...` and `N - 1`.
    pub fn knot_indices(&self) -> Vec<usize> {
        let mut knots: Vec<usize> = (0..self.slices).step_by(self.knot_stride).collect();
        if *knots.last().unwrap() != self.slices - 1 {
            knots.push(self.slices - 1);
        }
        knots
    }
}

/// Natural cubic spline through `(xs[i], ys[i])` with strictly increasing `xs`.
#[derive(Debug, Clone)]
pub struct NaturalSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    second: Vec<f64>,
}

impl NaturalSpline {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Self {
        assert_eq!(xs.len(), ys.len());
        assert!(!xs.is_empty());
        let n = xs.len();
        let mut second = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm on the interior equations, M_0 = M_{n-1} = 0.
            let m = n - 2;
            let mut diag = vec![0.0; m];
            let mut rhs = vec![0.0; m];
            let mut upper = vec![0.0; m];
            for i in 0..m {
                let h0 = xs[i + 1] - xs[i];
                let h1 = xs[i + 2] - xs[i + 1];
                diag[i] = 2.0 * (h0 + h1);
                upper[i] = h1;
                rhs[i] = 6.0 * ((ys[i + 2] - ys[i + 1]) / h1 - (ys[i + 1] - ys[i]) / h0);
            }
            for i in 1..m {
                let lower = xs[i + 1] - xs[i];
                let w = lower / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            second[m] = rhs[m - 1] / diag[m - 1];
            for i in (0..m - 1).rev() {
                second[i + 1] = (rhs[i] - upper[i] * second[i + 2]) / diag[i];
            }
        }
        Self { xs, ys, second }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if n == 1 {
            return self.ys[0];
        }
        let i = match self.xs.iter().position(|&k| k > x) {
            Some(0) => 0,
            Some(i) => i - 1,
            None => n - 2,
        };
        let (x0, x1) = (self.xs[i], self.xs[i + 1]);
        let h = x1 - x0;
        let a = (x1 - x) / h;
        let b = (x - x0) / h;
        a * self.ys[i]
            + b * self.ys[i + 1]
            + ((a * a * a - a) * self.second[i] + (b * b * b - b) * self.second[i + 1]) * h * h / 6.0
    }
}

pub fn random_spline_guess(spec: &GuessSpec, duration: f64) -> Result<Pulse> {
    spec.validate()?;
    let knots = spec.knot_indices();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let bound = spec.amplitude_bound;
    let mut channel = || -> Vec<f64> {
        let values: Vec<f64> = knots.iter().map(|_| rng.random_range(-bound..=bound)).collect();
        let spline = NaturalSpline::new(knots.iter().map(|&k| k as f64).collect(), values.clone());
        let mut out: Vec<f64> = (0..spec.slices).map(|n| spline.eval(n as f64)).collect();
        // Knots carry their drawn values verbatim.
        for (&k, &v) in knots.iter().zip(&values) {
            out[k] = v;
        }
        out
    };
    let ux = channel();
    let uy = channel();
    Pulse::new(duration, ux, uy)
}

/// Reuses the amplitude samples of `pulse` on the shorter duration `T - delta_t`.
pub fn pft_continue(pulse: &Pulse, delta_t: f64) -> Result<Pulse> {
    if !(delta_t >= 0.0) || delta_t >= pulse.duration() {
        return Err(Error::InvalidDuration(format!(
            "continuation step {delta_t} must lie in [0, {})",
            pulse.duration()
        )));
    }
    pulse.with_duration(pulse.duration() - delta_t)
}

pub const SCHEMA_VERSION: u64 = 1;

/// Everything stored alongside the amplitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveMetadata {
    pub d: usize,
    pub spin: f64,
    pub q: f64,
    pub detuning: f64,
    pub phase_label: Option<String>,
    pub final_error: Option<f64>,
    pub seed: Option<u64>,
    pub created_utc: String,
}

impl ArchiveMetadata {
    pub fn new(params: SpinParams) -> Self {
        Self {
            d: params.d,
            spin: (params.d as f64 - 1.0) / 2.0,
            q: params.q,
            detuning: params.detuning,
            phase_label: None,
            final_error: None,
            seed: None,
            created_utc: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        }
    }

    pub fn spin_params(&self) -> SpinParams {
        SpinParams {
            d: self.d,
            q: self.q,
            detuning: self.detuning,
        }
    }
}

#[derive(Serialize)]
struct Payload<'a> {
    schema_version: u64,
    d: usize,
    spin: f64,
    q: f64,
    detuning: f64,
    #[serde(rename = "T")]
    duration: f64,
    #[serde(rename = "N")]
    slices: usize,
    ux: &'a [f64],
    uy: &'a [f64],
    phase_label: &'a Option<String>,
    final_error: Option<f64>,
    seed: Option<u64>,
    created_utc: &'a str,
}

#[derive(Serialize, Deserialize)]
struct ArchiveDoc {
    schema_version: u64,
    d: usize,
    spin: f64,
    q: f64,
    detuning: f64,
    #[serde(rename = "T")]
    duration: f64,
    #[serde(rename = "N")]
    slices: usize,
    ux: Vec<f64>,
    uy: Vec<f64>,
    phase_label: Option<String>,
    final_error: Option<f64>,
    seed: Option<u64>,
    created_utc: String,
    checksum: String,
}

fn checksum(payload: &Payload<'_>) -> String {
    let canonical = serde_json::to_vec(payload).expect("payload serializes");
    hex::encode(Sha256::digest(&canonical))
}

fn payload<'a>(pulse: &'a Pulse, meta: &'a ArchiveMetadata) -> Payload<'a> {
    Payload {
        schema_version: SCHEMA_VERSION,
        d: meta.d,
        spin: meta.spin,
        q: meta.q,
        detuning: meta.detuning,
        duration: pulse.duration(),
        slices: pulse.slices(),
        ux: pulse.ux(),
        uy: pulse.uy(),
        phase_label: &meta.phase_label,
        final_error: meta.final_error,
        seed: meta.seed,
        created_utc: &meta.created_utc,
    }
}

/// JSON document for `pulse`; the checksum covers every other field.
pub fn save_pulse(pulse: &Pulse, meta: &ArchiveMetadata) -> String {
    let p = payload(pulse, meta);
    let sum = checksum(&p);
    let mut value = serde_json::to_value(&p).expect("payload serializes");
    value["checksum"] = serde_json::Value::String(sum);
    serde_json::to_string_pretty(&value).expect("archive serializes")
}

pub fn load_pulse(text: &str) -> Result<(Pulse, ArchiveMetadata)> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::CorruptArchive(e.to_string()))?;
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        Some(SCHEMA_VERSION) => {}
        Some(other) => return Err(Error::VersionMismatch(other)),
        None => return Err(Error::CorruptArchive("missing schema_version".into())),
    }
    let doc: ArchiveDoc = serde_json::from_value(value).map_err(|e| Error::CorruptArchive(e.to_string()))?;
    if doc.ux.len() != doc.slices || doc.uy.len() != doc.slices {
        return Err(Error::CorruptArchive(format!(
            "expected {} samples per channel, found {} and {}",
            doc.slices,
            doc.ux.len(),
            doc.uy.len()
        )));
    }
    let pulse = Pulse::new(doc.duration, doc.ux, doc.uy).map_err(|e| Error::CorruptArchive(e.to_string()))?;
    let meta = ArchiveMetadata {
        d: doc.d,
        spin: doc.spin,
        q: doc.q,
        detuning: doc.detuning,
        phase_label: doc.phase_label,
        final_error: doc.final_error,
        seed: doc.seed,
        created_utc: doc.created_utc,
    };
    if checksum(&payload(&pulse, &meta)) != doc.checksum {
        return Err(Error::CorruptArchive("checksum mismatch".into()));
    }
    Ok((pulse, meta))
}

pub fn write_archive(path: &Path, pulse: &Pulse, meta: &ArchiveMetadata) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::StorageUnavailable(e.to_string()))?;
    }
    std::fs::write(path, save_pulse(pulse, meta)).map_err(|e| Error::StorageUnavailable(e.to_string()))
}

pub fn read_archive(path: &Path) -> Result<(Pulse, ArchiveMetadata)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::StorageUnavailable(e.to_string()))?;
    load_pulse(&text)
}
