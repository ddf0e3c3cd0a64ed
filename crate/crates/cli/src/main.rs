// Copyright 2026 The QPF Contributors
// SPDX-License-Identifier: Apache-2.0

//! `qpf`: optimize, sweep and inspect QFT pulses for a quadrupole nucleus.
//!
//! Exit codes: 0 success, 1 user error (bad flags, files or parameters),
//! 2 runtime failure (divergence, storage, failed checks).

mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use qpf_core::experiment::{
    best_per_cell, min_time, min_time_from_records, multi_restart, read_records, run_manifest, write_csv, CurveRow,
    GridSpec, Manifest, MinTimeSettings, Parity, RestartSettings, ResultStore, SlicePolicy, Solver,
    SolverParams, DEFAULT_THRESHOLD,
};
use qpf_core::gate::phase_set;
use qpf_core::propagation::forward_trajectory;
use qpf_core::pulse::{pft_continue, read_archive, write_archive, ArchiveMetadata};
use qpf_core::{optimize, Error, FidelityMode, KrotovConfig, SpinSystem, TargetGate};

const OUT_ENV: &str = "QPF_OUT_DIR";
const DEFAULT_OUT: &str = "qpf-out";

#[derive(Parser)]
#[command(name = "qpf", version, about = "Krotov pulse synthesis of the qudit QFT on a quadrupole nucleus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct OptimizerArgs {
    /// Penalty weight lambda in units of the slice width dt.
    #[arg(long = "lambda-dt", default_value_t = 200.0)]
    lambda_dt: f64,
    #[arg(long, default_value_t = 1e-10)]
    epsilon: f64,
    #[arg(long = "max-iters", default_value_t = 10_000)]
    max_iters: usize,
    /// Extra budget for the best restart, as a multiple of --max-iters.
    #[arg(long = "refine-factor", default_value_t = 10)]
    refine_factor: usize,
    /// Knot amplitude bound for random guesses (units of q).
    #[arg(long, default_value_t = 10.0)]
    bound: f64,
    #[arg(long = "knot-stride", default_value_t = 10)]
    knot_stride: usize,
    /// Slice count; defaults to 100 for d <= 5 and 200 above.
    #[arg(long = "N")]
    slices: Option<usize>,
    #[arg(long, default_value_t = 30)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads for restarts (0: all cores).
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

impl OptimizerArgs {
    fn solver_params(&self) -> SolverParams {
        SolverParams {
            lambda_over_dt: self.lambda_dt,
            epsilon: self.epsilon,
            slices: self.slices.map_or(SlicePolicy::default(), SlicePolicy::Fixed),
            knot_stride: self.knot_stride,
            amplitude_bound: self.bound,
        }
    }

    fn restart_settings(&self) -> RestartSettings {
        RestartSettings {
            restarts: self.restarts,
            max_iters: self.max_iters,
            refine_factor: self.refine_factor,
            seed0: self.seed,
            workers: self.workers,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Figure {
    ErrorCurve,
    MinTime,
}

#[derive(Subcommand)]
enum Command {
    /// Multi-restart optimization at one duration.
    Optimize {
        #[arg(long)]
        d: usize,
        /// Pulse duration (units of 1/q).
        #[arg(long = "T")]
        duration: f64,
        /// `auto` (phase-invariant, classified afterwards) or a phase index k.
        #[arg(long, default_value = "auto")]
        phase: String,
        /// Archive path for the best pulse.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        opt: OptimizerArgs,
    },
    /// Run every cell of a JSON manifest.
    Sweep {
        #[arg(long)]
        manifest: PathBuf,
        /// Results directory; overrides the manifest's out_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Minimum duration at which the error drops below a threshold.
    MinTime {
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        /// `start:stop:step` or a comma-separated list (units of 1/q).
        #[arg(long, default_value = "0.5:12:0.5")]
        grid: String,
        /// Continuation steps, comma-separated, or `none`.
        #[arg(long, default_value = "0.1,0.02")]
        refine: String,
        /// `invariant` or a phase index k.
        #[arg(long, default_value = "invariant")]
        phase: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        opt: OptimizerArgs,
    },
    /// Admissible global phases of QFT_d.
    Phases {
        #[arg(long)]
        d: usize,
    },
    /// Compress an archived pulse to T - deltaT, optionally re-optimizing.
    Continue {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "deltaT")]
        delta_t: f64,
        #[arg(long)]
        reoptimize: bool,
        /// `invariant` or a phase index k, used with --reoptimize.
        #[arg(long, default_value = "invariant")]
        phase: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "lambda-dt", default_value_t = 200.0)]
        lambda_dt: f64,
        #[arg(long = "max-iters", default_value_t = 10_000)]
        max_iters: usize,
        #[arg(long, default_value_t = 1e-10)]
        epsilon: f64,
    },
    /// Plot-ready CSV and SVG from a records file.
    ExportPlot {
        #[arg(long)]
        records: PathBuf,
        #[arg(long, value_enum)]
        figure: Figure,
        /// Pass threshold for the min-time figure.
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        /// Output directory (default: next to the records file).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Built-in invariant checks.
    Verify,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn user(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NonFiniteAmplitude(_)
            | Error::StorageUnavailable(_)
            | Error::NoPassingPoint(_)
            | Error::AmbiguousPhase
            | Error::UnclassifiableGate(_) => 2,
            _ => 1,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult = Result<(), Failure>;

fn out_root(explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

/// `invariant`/`auto` or a phase index into the admissible set.
fn parse_mode(spec: &str, target: &TargetGate, allow_auto: bool) -> Result<FidelityMode, Failure> {
    match spec {
        "invariant" => Ok(FidelityMode::PhaseInvariant),
        "auto" if allow_auto => Ok(FidelityMode::PhaseInvariant),
        k => {
            let k: usize = k
                .parse()
                .map_err(|_| Failure::user(format!("--phase must be {} or an index, got {k:?}", if allow_auto { "auto" } else { "invariant" })))?;
            if k >= target.dim() {
                return Err(Failure::user(format!("phase index {k} out of range 0..{}", target.dim())));
            }
            Ok(FidelityMode::PhaseLocked(target.phase(k)))
        }
    }
}

fn parse_grid(s: &str) -> Result<Vec<f64>, Failure> {
    let bad = |_| Failure::user(format!("cannot parse grid {s:?}"));
    let spec = if s.contains(':') {
        let parts: Vec<f64> = s.split(':').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(bad)?;
        if parts.len() != 3 {
            return Err(Failure::user(format!("grid range must be start:stop:step, got {s:?}")));
        }
        GridSpec::Range {
            start: parts[0],
            stop: parts[1],
            step: parts[2],
        }
    } else {
        GridSpec::Points(s.split(',').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(bad)?)
    };
    Ok(spec.points()?)
}

fn parse_refine(s: &str) -> Result<Vec<f64>, Failure> {
    if s == "none" || s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| Failure::user(format!("cannot parse refinement steps {s:?}"))))
        .collect()
}

fn cmd_phases(d: usize) -> CliResult {
    let (phi0, set) = phase_set(d)?;
    let t = TargetGate::qft(d)?;
    let labels: Vec<String> = (0..d).map(|k| t.phase_label(k)).collect();
    println!("phi0 = {}; set = {}", t.phi0_label(), labels.join(", "));
    let radians: Vec<String> = set.iter().map(|p| format!("{p:.12}")).collect();
    println!("phi0 = {phi0:.12} rad; set = {} rad", radians.join(", "));
    Ok(())
}

fn cmd_optimize(d: usize, duration: f64, phase: &str, out: Option<&Path>, opt: &OptimizerArgs) -> CliResult {
    let target = TargetGate::qft(d)?;
    let mode = parse_mode(phase, &target, true)?;
    let solver = opt.solver_params().qft_solver(d, mode)?;
    println!(
        "d = {d} (I = {}), T = {duration} 1/q, N = {}, lambda = {} dt, restarts = {}, seed0 = {}",
        solver.system().spin(),
        solver.slices(),
        opt.lambda_dt,
        opt.restarts,
        opt.seed
    );
    let start = Instant::now();
    let outcome = multi_restart(&solver, duration, &opt.restart_settings())?;
    let best = &outcome.best;
    let pulse = best.pulse.as_ref().expect("selected run has a pulse");
    let u = forward_trajectory(solver.system(), pulse)?;
    let gate_error = target.gate_error(u.final_op())?;
    println!(
        "best restart: {} (seed {}), {} iterations, {}{}",
        best.record.restart,
        best.record.seed,
        best.record.iterations,
        best.record.stop_reason.as_str(),
        if outcome.refined { ", refined" } else { "" }
    );
    if let FidelityMode::PhaseLocked(phi) = mode {
        println!("phase-locked error = {:.6e} (phi = {})", target.phase_locked_error(phi, u.final_op())?, solver.phase_label());
    }
    println!("gate error = {gate_error:.6e}");
    match target.classify_phase(u.final_op()) {
        Ok(c) => println!(
            "phase class: k = {}, phi = {} ({:.12} rad, residual {:.3e})",
            c.index,
            target.phase_label(c.index),
            c.phase,
            c.residual
        ),
        Err(e) => println!("phase class: unavailable ({e})"),
    }
    println!("max |u| = {:.6} q", pulse.max_abs_amplitude());
    let path = match out {
        Some(p) => p.to_path_buf(),
        None => out_root(None).join(format!("optimize_d{d}_T{duration}_s{}.json", best.record.seed)),
    };
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::runtime(format!("{}: {e}", dir.display())))?;
    }
    let mut meta = ArchiveMetadata::new(solver.spin_params());
    meta.phase_label = Some(solver.classify(pulse).unwrap_or_else(|| solver.phase_label()));
    meta.final_error = Some(best.raw_error);
    meta.seed = Some(best.record.seed);
    write_archive(&path, pulse, &meta)?;
    println!("archive: {}", path.display());
    eprintln!("wallclock: {:.2} s", start.elapsed().as_secs_f64());
    Ok(())
}

fn cmd_sweep(manifest_path: &Path, out: Option<&Path>) -> CliResult {
    let text = std::fs::read_to_string(manifest_path)
        .map_err(|e| Failure::user(format!("{}: {e}", manifest_path.display())))?;
    let manifest = Manifest::from_json(&text)?;
    let root = out.map(Path::to_path_buf).or_else(|| manifest.out_dir.clone());
    let root = out_root(root.as_deref());
    let mut store = ResultStore::open(&root)?;
    let start = Instant::now();
    let summary = run_manifest(&manifest, &mut store)?;
    for c in &summary.curves {
        println!("d = {}  phase = {}  T = {} 1/q  best error = {:.6e}", c.d, c.phase, c.duration, c.final_error);
    }
    for row in &summary.min_times {
        match &row.result {
            Ok(e) => println!(
                "min-time d = {} ({})  phase = {}  T_min = {} 1/q  bracket ({}, {}] 1/q  {}",
                row.d,
                row.parity.as_str(),
                row.phase_label,
                e.t_min,
                e.bracketing.0,
                e.bracketing.1,
                e.method.as_str()
            ),
            Err(err) => println!("min-time d = {}  phase = {}  failed: {err}", row.d, row.phase_label),
        }
    }
    println!("{} records appended to {}", summary.records.len(), store.records_path().display());
    eprintln!("wallclock: {:.2} s", start.elapsed().as_secs_f64());
    Ok(())
}

fn cmd_min_time(d: usize, threshold: f64, grid: &str, refine: &str, phase: &str, out: Option<&Path>, opt: &OptimizerArgs) -> CliResult {
    let target = TargetGate::qft(d)?;
    let mode = parse_mode(phase, &target, false)?;
    let solver = opt.solver_params().qft_solver(d, mode)?;
    let settings = MinTimeSettings {
        threshold,
        grid: parse_grid(grid)?,
        refine_steps: parse_refine(refine)?,
        restart: opt.restart_settings(),
    };
    let start = Instant::now();
    let result = min_time(&solver, &settings)?;
    let mut store = ResultStore::open(out_root(out))?;
    for p in &result.curve {
        if let Some(o) = &p.outcome {
            store.persist(&solver, o)?;
        }
    }
    for o in &result.refinement {
        store.persist(&solver, o)?;
    }
    let e = &result.estimate;
    println!(
        "d = {} ({})  phase = {}  threshold = {:e}",
        e.d,
        Parity::of(e.d).as_str(),
        e.phase_label,
        e.threshold
    );
    println!(
        "T_min = {} 1/q  bracket ({}, {}] 1/q  method = {}",
        e.t_min,
        e.bracketing.0,
        e.bracketing.1,
        e.method.as_str()
    );
    if let Some(c) = &e.class_label {
        println!("phase class at T_min: {c}");
    }
    println!("records: {}", store.records_path().display());
    eprintln!("wallclock: {:.2} s", start.elapsed().as_secs_f64());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_continue(
    input: &Path,
    delta_t: f64,
    reoptimize: bool,
    phase: &str,
    out: Option<&Path>,
    lambda_dt: f64,
    max_iters: usize,
    epsilon: f64,
) -> CliResult {
    let (pulse, meta) = read_archive(input).map_err(|e| match e {
        Error::StorageUnavailable(m) => Failure::user(m),
        other => other.into(),
    })?;
    let system = SpinSystem::from_params(meta.spin_params())?;
    let target = TargetGate::qft(system.dim())?;
    let compressed = pft_continue(&pulse, delta_t)?;
    let u = forward_trajectory(&system, &compressed)?;
    println!(
        "T = {} 1/q -> {} 1/q, N = {}, dt = {} 1/q",
        pulse.duration(),
        compressed.duration(),
        compressed.slices(),
        compressed.dt()
    );
    println!("gate error after compression = {:.6e}", target.gate_error(u.final_op())?);
    let (result, error) = if reoptimize {
        let mode = parse_mode(phase, &target, false)?;
        let config = KrotovConfig {
            lambda_over_dt: lambda_dt,
            epsilon,
            max_iters,
            mode,
        };
        let trace = optimize(&system, &target, &compressed, &config)?;
        println!(
            "re-optimized: {} iterations ({}), error = {:.6e}, gate error = {:.6e}",
            trace.iterations,
            trace.stop_reason.as_str(),
            trace.final_error,
            trace.final_gate_error
        );
        (trace.final_pulse, trace.final_error)
    } else {
        let e = target.gate_error(u.final_op())?;
        (compressed, e)
    };
    let path = match out {
        Some(p) => p.to_path_buf(),
        None => {
            let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("pulse");
            out_root(None).join(format!("{stem}_T{}.json", result.duration()))
        }
    };
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::runtime(format!("{}: {e}", dir.display())))?;
    }
    let mut new_meta = ArchiveMetadata::new(system.params());
    new_meta.phase_label = meta.phase_label.clone();
    new_meta.final_error = Some(error);
    new_meta.seed = meta.seed;
    write_archive(&path, &result, &new_meta)?;
    println!("archive: {}", path.display());
    Ok(())
}

fn group_series(rows: &[CurveRow], key: impl Fn(&CurveRow) -> String, point: impl Fn(&CurveRow) -> (f64, f64)) -> Vec<plot::Series> {
    let mut out: Vec<plot::Series> = Vec::new();
    for r in rows {
        let label = key(r);
        match out.iter_mut().find(|s| s.label == label) {
            Some(s) => s.points.push(point(r)),
            None => out.push(plot::Series {
                label,
                points: vec![point(r)],
            }),
        }
    }
    for s in &mut out {
        s.points.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    out
}

fn cmd_export_plot(records: &Path, figure: Figure, threshold: f64, out: Option<&Path>) -> CliResult {
    if !records.is_file() {
        return Err(Failure::user(format!("{}: no such records file", records.display())));
    }
    let recs = read_records(records)?;
    let dir = match out {
        Some(p) => p.to_path_buf(),
        None => records.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    std::fs::create_dir_all(&dir).map_err(|e| Failure::runtime(format!("{}: {e}", dir.display())))?;
    let (name, rows, svg) = match figure {
        Figure::ErrorCurve => {
            let rows = best_per_cell(&recs);
            let series = group_series(&rows, |r| format!("d={} {}", r.d, r.phase), |r| (r.duration, r.final_error));
            let chart = plot::Chart {
                title: "QFT gate error vs pulse duration",
                x_label: "T (1/q)",
                y_label: "gate error",
                log_y: true,
                markers: false,
            };
            ("error_curve", rows.clone(), plot::render(&chart, &series))
        }
        Figure::MinTime => {
            let rows = min_time_from_records(&recs, threshold);
            let series = group_series(
                &rows,
                |r| format!("{} d, {}", Parity::of(r.d).as_str(), r.phase),
                |r| (r.d as f64, r.duration),
            );
            let chart = plot::Chart {
                title: "minimum gate time vs number of levels",
                x_label: "d",
                y_label: "T_min (1/q)",
                log_y: false,
                markers: true,
            };
            ("min_time", rows.clone(), plot::render(&chart, &series))
        }
    };
    let csv_path = dir.join(format!("{name}.csv"));
    let svg_path = dir.join(format!("{name}.svg"));
    write_csv(&csv_path, &rows)?;
    std::fs::write(&svg_path, svg).map_err(|e| Failure::runtime(format!("{}: {e}", svg_path.display())))?;
    println!("{} rows -> {}", rows.len(), csv_path.display());
    println!("chart -> {}", svg_path.display());
    Ok(())
}

fn cmd_verify() -> CliResult {
    let checks = qpf_core::verify::run_suite();
    let failed = checks.iter().filter(|c| !c.passed).count();
    for c in &checks {
        println!("[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if failed == 0 {
        Ok(())
    } else {
        Err(Failure::runtime(format!("{failed} check(s) failed")))
    }
}

fn dispatch(cli: Cli) -> CliResult {
    match cli.command {
        Command::Optimize {
            d,
            duration,
            phase,
            out,
            opt,
        } => cmd_optimize(d, duration, &phase, out.as_deref(), &opt),
        Command::Sweep { manifest, out } => cmd_sweep(&manifest, out.as_deref()),
        Command::MinTime {
            d,
            threshold,
            grid,
            refine,
            phase,
            out,
            opt,
        } => cmd_min_time(d, threshold, &grid, &refine, &phase, out.as_deref(), &opt),
        Command::Phases { d } => cmd_phases(d),
        Command::Continue {
            input,
            delta_t,
            reoptimize,
            phase,
            out,
            lambda_dt,
            max_iters,
            epsilon,
        } => cmd_continue(&input, delta_t, reoptimize, &phase, out.as_deref(), lambda_dt, max_iters, epsilon),
        Command::ExportPlot {
            records,
            figure,
            threshold,
            out,
        } => cmd_export_plot(&records, figure, threshold, out.as_deref()),
        Command::Verify => cmd_verify(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let informational = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            return if informational { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
