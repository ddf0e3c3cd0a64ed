// Copyright 2026 The QPF Contributors
// SPDX-License-Identifier: Apache-2.0

//! Restart sweeps, error-versus-duration curves, minimum-time estimates and
//! the append-only results store.
//!
//! Restart `i` of a cell always uses seed `seed0 + i`. Runs are executed on a
//! rayon pool but collected in index order, and the best run is chosen by
//! `(error, seed)`, so results do not depend on the worker count.

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gate::{FidelityMode, TargetGate};
use crate::krotov::{optimize, KrotovConfig, StopReason};
use crate::propagation::{forward_trajectory, Pulse};
use crate::pulse::{pft_continue, random_spline_guess, write_archive, ArchiveMetadata, GuessSpec};
use crate::spin::{check_dimension, SpinParams, SpinSystem};

/// Label used for phase-invariant runs in records and datasets.
pub const INVARIANT_LABEL: &str = "invariant";

pub const DEFAULT_THRESHOLD: f64 = 1e-5;

/// One optimization request handed to a [`Solver`].
#[derive(Debug, Clone)]
pub struct RunJob {
    pub duration: f64,
    pub seed: u64,
    /// Start from this pulse instead of a random guess.
    pub initial: Option<Pulse>,
    pub max_iters: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub pulse: Pulse,
    /// Objective error of `pulse` (phase-locked errors may exceed 1).
    pub final_error: f64,
    pub iterations: usize,
    pub stop_reason: StopReason,
}

/// Anything that turns a [`RunJob`] into a pulse. The runner only needs this
/// interface, which lets tests substitute a synthetic error curve.
pub trait Solver: Sync {
    fn spin_params(&self) -> SpinParams;

    /// `"invariant"` or the label of the locked phase.
    fn phase_label(&self) -> String;

    fn run(&self, job: &RunJob) -> Result<RunOutcome>;

    /// Phase class reached by `pulse`, for solvers that do not fix the phase.
    fn classify(&self, _pulse: &Pulse) -> Option<String> {
        None
    }
}

/// Slice count as a function of dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SlicePolicy {
    Fixed(usize),
    Split { max_small_d: usize, small: usize, large: usize },
}

impl Default for SlicePolicy {
    fn default() -> Self {
        SlicePolicy::Split {
            max_small_d: 5,
            small: 100,
            large: 200,
        }
    }
}

impl SlicePolicy {
    pub fn slices(&self, d: usize) -> usize {
        match *self {
            SlicePolicy::Fixed(n) => n,
            SlicePolicy::Split { max_small_d, small, large } => {
                if d <= max_small_d {
                    small
                } else {
                    large
                }
            }
        }
    }
}

/// Optimizer and guess parameters shared by every cell of a study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverParams {
    pub lambda_over_dt: f64,
    pub epsilon: f64,
    pub slices: SlicePolicy,
    pub knot_stride: usize,
    pub amplitude_bound: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        let k = KrotovConfig::default();
        Self {
            lambda_over_dt: k.lambda_over_dt,
            epsilon: k.epsilon,
            slices: SlicePolicy::default(),
            knot_stride: 10,
            amplitude_bound: 10.0,
        }
    }
}

impl SolverParams {
    /// Resonant `q = 1` system with the QFT target of dimension `d`.
    pub fn qft_solver(&self, d: usize, mode: FidelityMode) -> Result<KrotovSolver> {
        KrotovSolver::new(SpinSystem::new(d)?, TargetGate::qft(d)?, mode, *self)
    }
}

/// [`Solver`] backed by the Krotov optimizer with random spline guesses.
#[derive(Debug, Clone)]
pub struct KrotovSolver {
    system: SpinSystem,
    target: TargetGate,
    mode: FidelityMode,
    params: SolverParams,
}

impl KrotovSolver {
    pub fn new(system: SpinSystem, target: TargetGate, mode: FidelityMode, params: SolverParams) -> Result<Self> {
        if target.dim() != system.dim() {
            return Err(Error::DimensionMismatch {
                expected: system.dim(),
                got: target.dim(),
            });
        }
        if let FidelityMode::PhaseLocked(phi) = mode {
            if target.phase_index(phi).is_none() {
                return Err(Error::PhaseNotAdmissible(phi));
            }
        }
        KrotovConfig {
            lambda_over_dt: params.lambda_over_dt,
            epsilon: params.epsilon,
            max_iters: 1,
            mode,
        }
        .validate()?;
        let solver = Self {
            system,
            target,
            mode,
            params,
        };
        solver.guess_spec(0).validate()?;
        Ok(solver)
    }

    pub fn system(&self) -> &SpinSystem {
        &self.system
    }

    pub fn target(&self) -> &TargetGate {
        &self.target
    }

    pub fn mode(&self) -> FidelityMode {
        self.mode
    }

    pub fn params(&self) -> &SolverParams {
        &self.params
    }

    pub fn slices(&self) -> usize {
        self.params.slices.slices(self.system.dim())
    }

    pub fn guess_spec(&self, seed: u64) -> GuessSpec {
        GuessSpec {
            slices: self.slices(),
            knot_stride: self.params.knot_stride,
            amplitude_bound: self.params.amplitude_bound,
            seed,
        }
    }

    pub fn config(&self, max_iters: usize) -> KrotovConfig {
        KrotovConfig {
            lambda_over_dt: self.params.lambda_over_dt,
            epsilon: self.params.epsilon,
            max_iters,
            mode: self.mode,
        }
    }
}

impl Solver for KrotovSolver {
    fn spin_params(&self) -> SpinParams {
        self.system.params()
    }

    fn phase_label(&self) -> String {
        match self.mode {
            FidelityMode::PhaseInvariant => INVARIANT_LABEL.to_string(),
            FidelityMode::PhaseLocked(phi) => {
                self.target.phase_label(self.target.phase_index(phi).expect("checked in new"))
            }
        }
    }

    fn run(&self, job: &RunJob) -> Result<RunOutcome> {
        let initial = match &job.initial {
            Some(p) => p.clone(),
            None => random_spline_guess(&self.guess_spec(job.seed), job.duration)?,
        };
        let trace = optimize(&self.system, &self.target, &initial, &self.config(job.max_iters))?;
        Ok(RunOutcome {
            pulse: trace.final_pulse,
            final_error: trace.final_error,
            iterations: trace.iterations,
            stop_reason: trace.stop_reason,
        })
    }

    fn classify(&self, pulse: &Pulse) -> Option<String> {
        if self.mode != FidelityMode::PhaseInvariant {
            return None;
        }
        let u = forward_trajectory(&self.system, pulse).ok()?;
        let class = self.target.classify_phase(u.final_op()).ok()?;
        Some(self.target.phase_label(class.index))
    }
}

/// How a recorded run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Converged,
    MaxIters,
    Stalled,
    /// The solver returned an error; the record carries error 1.
    Failed,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Converged => "converged",
            RunStatus::MaxIters => "max-iters",
            RunStatus::Stalled => "stalled",
            RunStatus::Failed => "failed",
        }
    }
}

impl From<StopReason> for RunStatus {
    fn from(r: StopReason) -> Self {
        match r {
            StopReason::Converged => RunStatus::Converged,
            StopReason::MaxIters => RunStatus::MaxIters,
            StopReason::Stalled => RunStatus::Stalled,
        }
    }
}

/// One row of the records file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub d: usize,
    #[serde(rename = "T")]
    pub duration: f64,
    pub phase: String,
    pub restart: usize,
    pub seed: u64,
    /// Objective error clamped to `[0, 1]`.
    pub final_error: f64,
    pub iterations: usize,
    pub stop_reason: RunStatus,
    #[serde(rename = "wallclock_s")]
    pub wallclock_seconds: f64,
    /// Archive path relative to the store root.
    pub archive: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub record: SweepRecord,
    pub pulse: Option<Pulse>,
    /// Unclamped objective error, as stored in the archive.
    pub raw_error: f64,
}

#[derive(Debug, Clone)]
pub struct RestartOutcome {
    pub runs: Vec<RunResult>,
    /// The selected run, after refinement when that happened.
    pub best: RunResult,
    pub refined: bool,
}

impl RestartOutcome {
    pub fn best_error(&self) -> f64 {
        self.best.record.final_error
    }

    /// Iterations spent on this cell, refinement included.
    pub fn total_iterations(&self) -> usize {
        let runs: usize = self.runs.iter().map(|r| r.record.iterations).sum();
        if self.refined {
            let selected = self
                .runs
                .iter()
                .find(|r| r.record.seed == self.best.record.seed)
                .map_or(0, |r| r.record.iterations);
            runs + self.best.record.iterations - selected
        } else {
            runs
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RestartSettings {
    pub restarts: usize,
    pub max_iters: usize,
    /// The selected run gets `refine_factor * max_iters` further iterations.
    pub refine_factor: usize,
    pub seed0: u64,
    /// Worker threads; 0 uses the global rayon pool.
    pub workers: usize,
}

impl Default for RestartSettings {
    fn default() -> Self {
        Self {
            restarts: 30,
            max_iters: 10_000,
            refine_factor: 10,
            seed0: 0,
            workers: 0,
        }
    }
}

fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}

fn check_duration(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidDuration(format!("duration must be positive, got {t}")))
    }
}

/// Round to 12 decimals so that stepped durations print and compare cleanly.
pub fn round_duration(t: f64) -> f64 {
    (t * 1e12).round() / 1e12
}

fn execute(solver: &dyn Solver, job: RunJob, restart: usize) -> (RunResult, Option<Error>) {
    let start = Instant::now();
    let outcome = solver.run(&job);
    let wallclock = start.elapsed().as_secs_f64();
    let mut record = SweepRecord {
        d: solver.spin_params().d,
        duration: job.duration,
        phase: solver.phase_label(),
        restart,
        seed: job.seed,
        final_error: 1.0,
        iterations: 0,
        stop_reason: RunStatus::Failed,
        wallclock_seconds: wallclock,
        archive: None,
    };
    match outcome {
        Ok(o) => {
            record.final_error = o.final_error.clamp(0.0, 1.0);
            record.iterations = o.iterations;
            record.stop_reason = o.stop_reason.into();
            (
                RunResult {
                    record,
                    pulse: Some(o.pulse),
                    raw_error: o.final_error,
                },
                None,
            )
        }
        Err(e) => (
            RunResult {
                record,
                pulse: None,
                raw_error: 1.0,
            },
            Some(e),
        ),
    }
}

fn select_best(runs: &[RunResult]) -> Option<&RunResult> {
    runs.iter()
        .filter(|r| r.pulse.is_some())
        .min_by(|a, b| {
            a.record
                .final_error
                .total_cmp(&b.record.final_error)
                .then(a.record.seed.cmp(&b.record.seed))
        })
}

/// Continue the selected run with the extended budget if it ran out of
/// iterations; keeps the original when refinement does not help.
fn refine(solver: &dyn Solver, chosen: &RunResult, settings: &RestartSettings) -> (RunResult, bool) {
    let budget = settings.max_iters.saturating_mul(settings.refine_factor);
    if chosen.record.stop_reason != RunStatus::MaxIters || budget == 0 {
        return (chosen.clone(), false);
    }
    let job = RunJob {
        duration: chosen.record.duration,
        seed: chosen.record.seed,
        initial: chosen.pulse.clone(),
        max_iters: budget,
    };
    let (extra, err) = execute(solver, job, chosen.record.restart);
    if err.is_some() || extra.raw_error > chosen.raw_error {
        return (chosen.clone(), false);
    }
    let mut best = extra;
    best.record.iterations += chosen.record.iterations;
    best.record.wallclock_seconds += chosen.record.wallclock_seconds;
    (best, true)
}

fn finish(solver: &dyn Solver, runs: Vec<RunResult>, errors: Vec<Option<Error>>, settings: &RestartSettings) -> Result<RestartOutcome> {
    let Some(chosen) = select_best(&runs) else {
        return Err(errors.into_iter().flatten().next().expect("every run failed with an error"));
    };
    let (best, refined) = refine(solver, chosen, settings);
    Ok(RestartOutcome { runs, best, refined })
}

/// `settings.restarts` independent runs at duration `t`, best one refined.
pub fn multi_restart(solver: &dyn Solver, t: f64, settings: &RestartSettings) -> Result<RestartOutcome> {
    check_duration(t)?;
    if settings.restarts == 0 {
        return Err(Error::InvalidConfig("at least one restart is required".into()));
    }
    let (runs, errors): (Vec<_>, Vec<_>) = with_workers(settings.workers, || {
        (0..settings.restarts)
            .into_par_iter()
            .map(|i| {
                let job = RunJob {
                    duration: t,
                    seed: settings.seed0.wrapping_add(i as u64),
                    initial: None,
                    max_iters: settings.max_iters,
                };
                execute(solver, job, i)
            })
            .collect::<Vec<_>>()
    })?
    .into_iter()
    .unzip();
    finish(solver, runs, errors, settings)
}

/// A single run at `t` seeded with `pulse` compressed to the new duration.
pub fn continuation_run(solver: &dyn Solver, pulse: &Pulse, t: f64, settings: &RestartSettings) -> Result<RestartOutcome> {
    check_duration(t)?;
    let seed = pft_continue(pulse, round_duration(pulse.duration() - t))?.with_duration(t)?;
    let job = RunJob {
        duration: t,
        seed: settings.seed0,
        initial: Some(seed),
        max_iters: settings.max_iters,
    };
    let (run, err) = execute(solver, job, 0);
    finish(solver, vec![run], vec![err], settings)
}

#[derive(Debug, Clone)]
pub struct CurvePoint {
    pub duration: f64,
    /// Best error at this duration; 1 when every run failed.
    pub best_error: f64,
    pub outcome: Option<RestartOutcome>,
    pub seeded: bool,
}

impl CurvePoint {
    pub fn iterations(&self) -> usize {
        self.outcome.as_ref().map_or(0, |o| o.total_iterations())
    }

    pub fn best_pulse(&self) -> Option<&Pulse> {
        self.outcome.as_ref().and_then(|o| o.best.pulse.as_ref())
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("duration grid is empty".into()));
    }
    for &t in grid {
        check_duration(t)?;
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidConfig("duration grid must be strictly ascending".into()));
    }
    Ok(())
}

/// Best error at every grid duration, in ascending order of `T`.
///
/// With `pft_seed` the grid is walked from the longest duration down and each
/// point after the first is a single continuation run from its right
/// neighbour's best pulse (falling back to random restarts if that neighbour
/// failed).
pub fn error_vs_duration(solver: &dyn Solver, grid: &[f64], settings: &RestartSettings, pft_seed: bool) -> Result<Vec<CurvePoint>> {
    check_grid(grid)?;
    let mut points: Vec<CurvePoint> = Vec::with_capacity(grid.len());
    for &t in grid.iter().rev() {
        let seed_pulse = if pft_seed {
            points.last().and_then(|p| p.best_pulse()).cloned()
        } else {
            None
        };
        let seeded = seed_pulse.is_some();
        let result = match &seed_pulse {
            Some(p) => continuation_run(solver, p, t, settings),
            None => multi_restart(solver, t, settings),
        };
        points.push(match result {
            Ok(o) => CurvePoint {
                duration: t,
                best_error: o.best_error(),
                outcome: Some(o),
                seeded,
            },
            Err(_) => CurvePoint {
                duration: t,
                best_error: 1.0,
                outcome: None,
                seeded,
            },
        });
    }
    points.reverse();
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MinTimeMethod {
    Grid,
    PftRefined,
}

impl MinTimeMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            MinTimeMethod::Grid => "grid",
            MinTimeMethod::PftRefined => "pft-refined",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinTimeEstimate {
    pub d: usize,
    pub phase_label: String,
    /// Phase class of the passing pulse for phase-invariant runs.
    pub class_label: Option<String>,
    pub threshold: f64,
    pub t_min: f64,
    /// `(T_fail, T_pass)`; `T_fail = 0` when no shorter duration was tried.
    pub bracketing: (f64, f64),
    pub method: MinTimeMethod,
}

#[derive(Debug, Clone)]
pub struct MinTimeSettings {
    pub threshold: f64,
    pub grid: Vec<f64>,
    /// Continuation step sizes, coarse to fine. Empty disables refinement.
    pub refine_steps: Vec<f64>,
    pub restart: RestartSettings,
}

impl Default for MinTimeSettings {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            grid: default_grid(),
            refine_steps: vec![0.1, 0.02],
            restart: RestartSettings::default(),
        }
    }
}

/// `0.5, 1.0, ..., 12.0`.
pub fn default_grid() -> Vec<f64> {
    (1..=24).map(|k| 0.5 * k as f64).collect()
}

#[derive(Debug, Clone)]
pub struct MinTimeResult {
    pub estimate: MinTimeEstimate,
    pub curve: Vec<CurvePoint>,
    /// Continuation runs made while refining, in execution order.
    pub refinement: Vec<RestartOutcome>,
}

/// Coarse pass over the grid followed by continuation refinement.
pub fn min_time(solver: &dyn Solver, settings: &MinTimeSettings) -> Result<MinTimeResult> {
    let curve = error_vs_duration(solver, &settings.grid, &settings.restart, false)?;
    refine_min_time(solver, curve, settings)
}

/// Refinement stage of [`min_time`] on an existing curve.
pub fn refine_min_time(solver: &dyn Solver, curve: Vec<CurvePoint>, settings: &MinTimeSettings) -> Result<MinTimeResult> {
    if !(settings.threshold > 0.0) {
        return Err(Error::InvalidConfig("threshold must be positive".into()));
    }
    if settings.refine_steps.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::InvalidConfig("refinement steps must be positive".into()));
    }
    let last = curve.last().ok_or_else(|| Error::InvalidConfig("duration grid is empty".into()))?;
    if !(last.best_error < settings.threshold) {
        return Err(Error::NoPassingPoint(last.duration));
    }
    let idx = curve
        .iter()
        .position(|p| p.best_error < settings.threshold)
        .expect("last point passes");
    let mut t_pass = curve[idx].duration;
    let mut t_fail = if idx > 0 { curve[idx - 1].duration } else { 0.0 };
    let mut pulse = curve[idx].best_pulse().expect("passing point has a pulse").clone();

    let mut refinement = Vec::new();
    for &step in &settings.refine_steps {
        loop {
            let t = round_duration(t_pass - step);
            if t <= t_fail || t <= 0.0 {
                break;
            }
            let outcome = continuation_run(solver, &pulse, t, &settings.restart);
            let passing = match &outcome {
                Ok(o) if o.best_error() < settings.threshold => o.best.pulse.clone(),
                _ => None,
            };
            if let Ok(o) = outcome {
                refinement.push(o);
            }
            match passing {
                Some(p) => {
                    t_pass = t;
                    pulse = p;
                }
                None => {
                    t_fail = t;
                    break;
                }
            }
        }
    }

    let estimate = MinTimeEstimate {
        d: solver.spin_params().d,
        phase_label: solver.phase_label(),
        class_label: solver.classify(&pulse),
        threshold: settings.threshold,
        t_min: t_pass,
        bracketing: (t_fail, t_pass),
        method: if settings.refine_steps.is_empty() {
            MinTimeMethod::Grid
        } else {
            MinTimeMethod::PftRefined
        },
    };
    Ok(MinTimeResult {
        estimate,
        curve,
        refinement,
    })
}

/// Which fidelity modes a study runs for each dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseMode {
    Invariant,
    Locked,
    /// Phase-invariant everywhere, plus every locked phase for small `d`.
    #[default]
    Auto,
}

/// Largest dimension for which [`PhaseMode::Auto`] also runs per-phase studies.
pub const PER_PHASE_MAX_D: usize = 4;

impl PhaseMode {
    pub fn modes(self, target: &TargetGate) -> Vec<FidelityMode> {
        let locked = || target.phases().iter().map(|&p| FidelityMode::PhaseLocked(p));
        match self {
            PhaseMode::Invariant => vec![FidelityMode::PhaseInvariant],
            PhaseMode::Locked => locked().collect(),
            PhaseMode::Auto => {
                let mut v = vec![FidelityMode::PhaseInvariant];
                if target.dim() <= PER_PHASE_MAX_D {
                    v.extend(locked());
                }
                v
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Odd,
    Even,
}

impl Parity {
    pub fn of(d: usize) -> Self {
        if d % 2 == 0 {
            Parity::Even
        } else {
            Parity::Odd
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Parity::Odd => "odd",
            Parity::Even => "even",
        }
    }
}

#[derive(Debug, Clone)]
pub struct MinTimeRow {
    pub d: usize,
    pub parity: Parity,
    pub phase_label: String,
    pub result: std::result::Result<MinTimeEstimate, Error>,
}

/// [`min_time`] for every dimension and mode; failures are kept per row.
pub fn min_time_vs_d(d_list: &[usize], phase_mode: PhaseMode, params: &SolverParams, settings: &MinTimeSettings) -> Vec<MinTimeRow> {
    let mut rows = Vec::new();
    for &d in d_list {
        let target = match check_dimension(d).and_then(|_| TargetGate::qft(d)) {
            Ok(t) => t,
            Err(e) => {
                rows.push(MinTimeRow {
                    d,
                    parity: Parity::of(d),
                    phase_label: INVARIANT_LABEL.into(),
                    result: Err(e),
                });
                continue;
            }
        };
        for mode in phase_mode.modes(&target) {
            let phase_label = match mode {
                FidelityMode::PhaseInvariant => INVARIANT_LABEL.to_string(),
                FidelityMode::PhaseLocked(phi) => target.phase_label(target.phase_index(phi).unwrap_or(0)),
            };
            let result = params
                .qft_solver(d, mode)
                .and_then(|s| min_time(&s, settings))
                .map(|r| r.estimate);
            rows.push(MinTimeRow {
                d,
                parity: Parity::of(d),
                phase_label,
                result,
            });
        }
    }
    rows
}

/// Filter for [`ResultStore::query`]; `None` fields match everything and
/// ranges are inclusive.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RecordQuery {
    pub d: Option<usize>,
    pub duration: Option<(f64, f64)>,
    pub phase: Option<String>,
    pub error: Option<(f64, f64)>,
}

impl RecordQuery {
    pub fn matches(&self, r: &SweepRecord) -> bool {
        let within = |range: Option<(f64, f64)>, x: f64| range.is_none_or(|(lo, hi)| lo <= x && x <= hi);
        self.d.is_none_or(|d| d == r.d)
            && within(self.duration, r.duration)
            && self.phase.as_ref().is_none_or(|p| *p == r.phase)
            && within(self.error, r.final_error)
    }
}

pub const RECORDS_FILE: &str = "records.csv";
pub const ARCHIVE_DIR: &str = "archives";

fn storage(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::StorageUnavailable(format!("{}: {e}", path.display()))
}

/// Results directory: `records.csv` plus `archives/*.json`.
#[derive(Debug)]
pub struct ResultStore {
    root: PathBuf,
}

impl ResultStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let archives = root.join(ARCHIVE_DIR);
        fs::create_dir_all(&archives).map_err(|e| storage(&archives, e))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn records_path(&self) -> PathBuf {
        self.root.join(RECORDS_FILE)
    }

    /// Append rows; the header is written when the file is new or empty.
    pub fn append(&mut self, records: &[SweepRecord]) -> Result<()> {
        let path = self.records_path();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| storage(&path, e))?;
        let fresh = file.metadata().map_err(|e| storage(&path, e))?.len() == 0;
        let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
        for r in records {
            w.serialize(r).map_err(|e| storage(&path, e))?;
        }
        w.flush().map_err(|e| storage(&path, e))
    }

    /// Write the archive of a run and return its path relative to the root.
    pub fn write_run_archive(&self, solver: &dyn Solver, run: &RunResult, suffix: &str) -> Result<Option<String>> {
        let Some(pulse) = &run.pulse else {
            return Ok(None);
        };
        let r = &run.record;
        let name = format!(
            "{ARCHIVE_DIR}/d{}_{}_T{}_r{}_s{}{suffix}.json",
            r.d,
            r.phase.replace('/', "_"),
            r.duration,
            r.restart,
            r.seed
        );
        let mut meta = ArchiveMetadata::new(solver.spin_params());
        meta.phase_label = Some(solver.classify(pulse).unwrap_or_else(|| r.phase.clone()));
        meta.final_error = Some(run.raw_error);
        meta.seed = Some(r.seed);
        write_archive(&self.root.join(&name), pulse, &meta)?;
        Ok(Some(name))
    }

    /// Archive and append every run of an outcome (and the refined best).
    pub fn persist(&mut self, solver: &dyn Solver, outcome: &RestartOutcome) -> Result<Vec<SweepRecord>> {
        let mut rows = Vec::with_capacity(outcome.runs.len() + 1);
        for run in &outcome.runs {
            let mut rec = run.record.clone();
            rec.archive = self.write_run_archive(solver, run, "")?;
            rows.push(rec);
        }
        if outcome.refined {
            let mut rec = outcome.best.record.clone();
            rec.archive = self.write_run_archive(solver, &outcome.best, "_refined")?;
            rows.push(rec);
        }
        self.append(&rows)?;
        Ok(rows)
    }

    pub fn records(&self) -> Result<Vec<SweepRecord>> {
        let path = self.records_path();
        if !path.exists() {
            return Ok(Vec::new());
        }
        read_records(&path)
    }

    pub fn query(&self, q: &RecordQuery) -> Result<Vec<SweepRecord>> {
        Ok(self.records()?.into_iter().filter(|r| q.matches(r)).collect())
    }
}

pub fn read_records(path: &Path) -> Result<Vec<SweepRecord>> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| storage(path, e))?;
    rd.deserialize()
        .collect::<std::result::Result<Vec<SweepRecord>, _>>()
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

/// One `(d, phase, T)` cell of a figure dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub d: usize,
    pub phase: String,
    #[serde(rename = "T")]
    pub duration: f64,
    pub final_error: f64,
}

fn figure_order(a: &CurveRow, b: &CurveRow) -> std::cmp::Ordering {
    a.d.cmp(&b.d)
        .then_with(|| a.phase.cmp(&b.phase))
        .then(a.duration.total_cmp(&b.duration))
}

/// Lowest recorded error per `(d, phase, T)`, sorted.
pub fn best_per_cell(records: &[SweepRecord]) -> Vec<CurveRow> {
    let mut rows: Vec<CurveRow> = Vec::new();
    let mut sorted: Vec<CurveRow> = records
        .iter()
        .map(|r| CurveRow {
            d: r.d,
            phase: r.phase.clone(),
            duration: r.duration,
            final_error: r.final_error,
        })
        .collect();
    sorted.sort_by(figure_order);
    for r in sorted {
        match rows.last_mut() {
            Some(last) if last.d == r.d && last.phase == r.phase && last.duration == r.duration => {
                last.final_error = last.final_error.min(r.final_error);
            }
            _ => rows.push(r),
        }
    }
    rows
}

/// Shortest recorded passing duration per `(d, phase)`.
pub fn min_time_from_records(records: &[SweepRecord], threshold: f64) -> Vec<CurveRow> {
    let mut out: Vec<CurveRow> = Vec::new();
    for cell in best_per_cell(records) {
        if !(cell.final_error < threshold) {
            continue;
        }
        match out.last() {
            Some(last) if last.d == cell.d && last.phase == cell.phase => {}
            _ => out.push(cell),
        }
    }
    out
}

/// Duration grid in a manifest: explicit points or an inclusive range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Points(Vec<f64>),
    Range { start: f64, stop: f64, step: f64 },
}

impl GridSpec {
    pub fn points(&self) -> Result<Vec<f64>> {
        let pts = match *self {
            GridSpec::Points(ref v) => v.clone(),
            GridSpec::Range { start, stop, step } => {
                if !(step > 0.0 && start.is_finite() && stop >= start) {
                    return Err(Error::InvalidConfig(format!("bad grid range {start}..{stop} step {step}")));
                }
                let n = ((stop - start) / step + 1e-9).floor() as usize;
                (0..=n).map(|k| round_duration(start + k as f64 * step)).collect()
            }
        };
        check_grid(&pts)?;
        Ok(pts)
    }
}

fn default_restarts() -> usize {
    30
}
fn default_max_iters() -> usize {
    10_000
}
fn default_lambda() -> f64 {
    200.0
}
fn default_epsilon() -> f64 {
    1e-10
}
fn default_bound() -> f64 {
    10.0
}
fn default_stride() -> usize {
    10
}
fn default_refine_factor() -> usize {
    10
}
fn default_refine() -> Vec<f64> {
    vec![0.1, 0.02]
}

/// Study description loaded from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub d_list: Vec<usize>,
    #[serde(rename = "T_grid")]
    pub t_grid: GridSpec,
    #[serde(default)]
    pub phase_mode: PhaseMode,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_lambda")]
    pub lambda_over_dt: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(rename = "N_policy", default)]
    pub n_policy: SlicePolicy,
    #[serde(default = "default_bound")]
    pub amplitude_bound: f64,
    #[serde(default = "default_stride")]
    pub knot_stride: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// When present, a minimum-time estimate is made for every cell.
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default = "default_refine")]
    pub refine: Vec<f64>,
    #[serde(default = "default_refine_factor")]
    pub refine_factor: usize,
    #[serde(default)]
    pub pft_seed: bool,
}

impl Manifest {
    pub fn from_json(text: &str) -> Result<Self> {
        let m: Manifest = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(format!("manifest: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_list.is_empty() {
            return Err(Error::InvalidConfig("d_list is empty".into()));
        }
        for &d in &self.d_list {
            check_dimension(d)?;
        }
        self.t_grid.points()?;
        if self.restarts == 0 {
            return Err(Error::InvalidConfig("restarts must be at least 1".into()));
        }
        if let Some(t) = self.threshold {
            if !(t > 0.0) {
                return Err(Error::InvalidConfig("threshold must be positive".into()));
            }
        }
        for &d in &self.d_list {
            self.solver_params().qft_solver(d, FidelityMode::PhaseInvariant)?;
        }
        Ok(())
    }

    pub fn solver_params(&self) -> SolverParams {
        SolverParams {
            lambda_over_dt: self.lambda_over_dt,
            epsilon: self.epsilon,
            slices: self.n_policy,
            knot_stride: self.knot_stride,
            amplitude_bound: self.amplitude_bound,
        }
    }

    pub fn restart_settings(&self) -> RestartSettings {
        RestartSettings {
            restarts: self.restarts,
            max_iters: self.max_iters,
            refine_factor: self.refine_factor,
            seed0: self.seed,
            workers: self.workers,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SweepSummary {
    pub curves: Vec<CurveRow>,
    pub min_times: Vec<MinTimeRow>,
    /// Every row appended to the records file, in order.
    pub records: Vec<SweepRecord>,
}

pub const CURVES_FILE: &str = "error_curves.csv";
pub const MIN_TIME_FILE: &str = "min_time.csv";

/// Run every `(d, mode)` cell of a manifest into `store`, then write the
/// figure datasets next to the records.
pub fn run_manifest(manifest: &Manifest, store: &mut ResultStore) -> Result<SweepSummary> {
    manifest.validate()?;
    let grid = manifest.t_grid.points()?;
    let params = manifest.solver_params();
    let restart = manifest.restart_settings();
    let mut summary = SweepSummary::default();

    for &d in &manifest.d_list {
        let target = TargetGate::qft(d)?;
        for mode in manifest.phase_mode.modes(&target) {
            let solver = params.qft_solver(d, mode)?;
            let curve = error_vs_duration(&solver, &grid, &restart, manifest.pft_seed)?;
            for p in &curve {
                if let Some(o) = &p.outcome {
                    summary.records.extend(store.persist(&solver, o)?);
                }
                summary.curves.push(CurveRow {
                    d,
                    phase: solver.phase_label(),
                    duration: p.duration,
                    final_error: p.best_error,
                });
            }
            if let Some(threshold) = manifest.threshold {
                let settings = MinTimeSettings {
                    threshold,
                    grid: grid.clone(),
                    refine_steps: manifest.refine.clone(),
                    restart,
                };
                let result = refine_min_time(&solver, curve, &settings);
                if let Ok(r) = &result {
                    for o in &r.refinement {
                        summary.records.extend(store.persist(&solver, o)?);
                    }
                }
                summary.min_times.push(MinTimeRow {
                    d,
                    parity: Parity::of(d),
                    phase_label: solver.phase_label(),
                    result: result.map(|r| r.estimate),
                });
            }
        }
    }

    write_csv(&store.root().join(CURVES_FILE), &summary.curves)?;
    if manifest.threshold.is_some() {
        write_min_time_csv(&store.root().join(MIN_TIME_FILE), &summary.min_times)?;
    }
    Ok(summary)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| storage(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| storage(path, e))?;
    }
    w.flush().map_err(|e| storage(path, e))
}

#[derive(Serialize)]
struct MinTimeCsvRow<'a> {
    d: usize,
    parity: &'a str,
    phase: &'a str,
    #[serde(rename = "T_min")]
    t_min: Option<f64>,
    #[serde(rename = "T_fail")]
    t_fail: Option<f64>,
    #[serde(rename = "T_pass")]
    t_pass: Option<f64>,
    method: Option<&'a str>,
    class: Option<&'a str>,
    error: Option<String>,
}

/// Minimum-time dataset: `d,parity,phase,T_min,T_fail,T_pass,method,class,error`.
pub fn write_min_time_csv(path: &Path, rows: &[MinTimeRow]) -> Result<()> {
    let out: Vec<MinTimeCsvRow> = rows
        .iter()
        .map(|r| {
            let est = r.result.as_ref().ok();
            MinTimeCsvRow {
                d: r.d,
                parity: r.parity.as_str(),
                phase: &r.phase_label,
                t_min: est.map(|e| e.t_min),
                t_fail: est.map(|e| e.bracketing.0),
                t_pass: est.map(|e| e.bracketing.1),
                method: est.map(|e| e.method.as_str()),
                class: est.and_then(|e| e.class_label.as_deref()),
                error: r.result.as_ref().err().map(|e| e.to_string()),
            }
        })
        .collect();
    write_csv(path, &out)
}
