//! The four commands: load a scenario, run it, and serialize the results
//! under one directory per run.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Map, Value};

use pipeobs::energy::{AuditReport, DecayFit};
use pipeobs::netmodel::{load_scenario, MeasurementMode, Profile, Scenario};
use pipeobs::picard::{semi_global_continuation, ContractionHistory, SemiGlobalRun, PICARD_TOL};
use pipeobs::solver::{run_twin, RunOptions, TwinRun};
use pipeobs::Error;

use crate::canon::{canonical_json, digest, float};
use crate::plot::decay_svg;
use crate::series::write_series;

/// Flags shared by every command.
#[derive(Debug, Clone, Default)]
pub struct GlobalOpts {
    pub out: Option<PathBuf>,
    pub cells: Option<usize>,
    pub cfl: Option<f64>,
    pub strict: bool,
    pub threads: Option<usize>,
}

/// Exit code for an error, per the documented contract: 1 config, 2 solver,
/// 3 strict audit, 4 contraction/budget.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Parse(_) | Error::Validation(_) | Error::Domain(_) | Error::Io(_) => 1,
        Error::Solve(_) | Error::Solver { .. } | Error::Diagnostic(_) => 2,
        Error::StrictAudit(_) => 3,
        Error::Budget(_) | Error::Contraction(_) => 4,
    }
}

fn out_root(opts: &GlobalOpts) -> PathBuf {
    if let Some(dir) = &opts.out {
        return dir.clone();
    }
    if let Ok(dir) = std::env::var("PIPEOBS_OUT") {
        if !dir.is_empty() {
            return PathBuf::from(dir);
        }
    }
    PathBuf::from("out")
}

/// A scenario loaded from disk plus everything needed for the summary.
struct LoadedRun {
    scenario: Scenario,
    name: String,
    /// Digest over the file's canonical JSON plus the effective overrides.
    digest: String,
}

fn load(path: &Path, opts: &GlobalOpts, overrides: &Value) -> Result<LoadedRun, Error> {
    let text = fs::read_to_string(path)?;
    let raw: Value = serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
    let mut scenario = load_scenario(&text)?;
    scenario.name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".into());

    if let Some(cells) = opts.cells {
        if cells < 4 {
            return Err(Error::Validation(format!("grid.cells must be at least 4, got {cells}")));
        }
        scenario.cells = cells;
    }
    if let Some(cfl) = opts.cfl {
        if !(cfl > 0.0 && cfl <= 1.0) {
            return Err(Error::Validation(format!("grid.cfl must lie in (0, 1], got {cfl}")));
        }
        scenario.cfl = cfl;
    }

    let mut effective = Map::new();
    effective.insert("config".into(), raw);
    effective.insert(
        "overrides".into(),
        json!({
            "cells": opts.cells,
            "cfl": opts.cfl,
            "strict": opts.strict,
        }),
    );
    let mut merged = Value::Object(effective);
    if let Value::Object(map) = &mut merged {
        if let Value::Object(o) = map.get_mut("overrides").expect("just inserted") {
            if let Value::Object(extra) = overrides.clone() {
                o.extend(extra);
            }
        }
    }
    let digest = digest(&merged);
    let name = scenario.name.clone();
    Ok(LoadedRun { scenario, name, digest })
}

fn ensure_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn fit_json(fit: &Option<DecayFit>) -> Value {
    match fit {
        None => Value::Null,
        Some(f) => json!({
            "c1": float(f.c1),
            "c2": float(f.c2),
            "window": [float(f.window.0), float(f.window.1)],
            "residual": float(f.residual),
            "plateau": f.plateau.map(float).unwrap_or(Value::Null),
            "n_used": f.n_used,
            "non_decaying": f.non_decaying,
            "already_synchronized": f.already_synchronized,
        }),
    }
}

fn audit_json(audit: &AuditReport) -> Value {
    let checks: Vec<Value> = audit
        .checks
        .iter()
        .map(|c| {
            json!({
                "name": c.name,
                "satisfied": c.satisfied,
                "margin": float(c.margin),
                "detail": c.detail,
            })
        })
        .collect();
    json!({ "hard_ok": audit.hard_ok, "checks": checks })
}

fn run_summary(loaded: &LoadedRun, command: &str, run: &TwinRun, wall_s: f64) -> Value {
    let s = &loaded.scenario;
    json!({
        "scenario": loaded.name,
        "digest": loaded.digest,
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "mode": s.mode.as_str(),
        "mu": float(s.mu),
        "gamma": float(s.gamma),
        "cells": s.cells,
        "cfl": float(s.cfl),
        "t_end": float(s.t_end),
        "steps": run.steps,
        "samples": run.series.len(),
        "fit": fit_json(&run.fit),
        "audit": audit_json(&run.audit),
        "norm": { "c_lo": float(run.norm.c_lo), "c_hi": float(run.norm.c_hi) },
        "delta": float(run.delta),
        "delta_candidates": [float(run.delta_candidates.0), float(run.delta_candidates.1)],
        "initial_error_sq": float(run.initial_error_sq),
        "final_error_sq": float(run.final_error_sq),
        "mass_difference_initial": float(run.mass_difference_initial),
        "mass_difference_final": float(run.mass_difference_final),
        "warnings": run.warnings,
        "wallclock_s": float(wall_s),
    })
}

fn write_twin_outputs(
    dir: &Path,
    loaded: &LoadedRun,
    command: &str,
    run: &TwinRun,
    wall_s: f64,
    with_plot: bool,
) -> Result<(), Error> {
    ensure_dir(dir)?;
    fs::write(dir.join("series.csv"), write_series(&run.series))?;
    let summary = run_summary(loaded, command, run, wall_s);
    fs::write(dir.join("summary.json"), canonical_json(&summary))?;
    if with_plot {
        fs::write(dir.join("decay.svg"), decay_svg(&run.series))?;
    }
    Ok(())
}

/// Run the plain system only (no observer) and write series plus summary.
pub fn cmd_simulate(config: &Path, opts: &GlobalOpts) -> Result<PathBuf, Error> {
    let started = Instant::now();
    let mut loaded = load(config, opts, &json!({"command": "simulate"}))?;
    loaded.scenario.mode = MeasurementMode::None;
    loaded.scenario.mu = 0.0;
    let options = RunOptions { strict: opts.strict, ..RunOptions::default() };
    let run = run_twin(&loaded.scenario, options)?;
    let dir = out_root(opts).join(&loaded.name);
    write_twin_outputs(&dir, &loaded, "simulate", &run, started.elapsed().as_secs_f64(), false)?;
    Ok(dir)
}

/// Scale a profile's values by `1 + p` (velocity perturbation helper).
fn scale_profile(p: &Profile, factor: f64) -> Profile {
    match p {
        Profile::Constant(c) => Profile::Constant(c * factor),
        Profile::Linear { left, right } => Profile::Linear { left: left * factor, right: right * factor },
        Profile::Samples(s) => Profile::Samples(s.iter().map(|&(x, y)| (x, y * factor)).collect()),
    }
}

/// Twin run with the observer. Mode, gain, and the observer's initial
/// velocity perturbation can be overridden from the command line.
pub fn cmd_observe(
    config: &Path,
    opts: &GlobalOpts,
    mode: Option<&str>,
    mu: Option<f64>,
    perturb: Option<f64>,
) -> Result<PathBuf, Error> {
    let started = Instant::now();
    let overrides = json!({
        "command": "observe",
        "mode": mode,
        "mu": mu,
        "perturb": perturb,
    });
    let mut loaded = load(config, opts, &overrides)?;
    if let Some(m) = mode {
        loaded.scenario.mode = MeasurementMode::parse(m)?;
    }
    if let Some(m) = mu {
        if !(m >= 0.0) || !m.is_finite() {
            return Err(Error::Validation(format!("observer gain mu must be >= 0, got {m}")));
        }
        loaded.scenario.mu = m;
    }
    if let Some(p) = perturb {
        if !p.is_finite() {
            return Err(Error::Validation(format!("perturbation must be finite, got {p}")));
        }
        loaded.scenario.observer_initial = loaded
            .scenario
            .initial
            .iter()
            .map(|ep| pipeobs::netmodel::EdgeProfiles {
                rho: ep.rho.clone(),
                v: scale_profile(&ep.v, 1.0 + p),
            })
            .collect();
    }
    let options = RunOptions { strict: opts.strict, ..RunOptions::default() };
    let run = run_twin(&loaded.scenario, options)?;
    let dir = out_root(opts).join(&loaded.name);
    write_twin_outputs(&dir, &loaded, "observe", &run, started.elapsed().as_secs_f64(), true)?;
    Ok(dir)
}

fn history_json(h: &ContractionHistory) -> Value {
    json!({
        "iterations": h.iterations,
        "converged": h.converged,
        "residual": float(h.residual),
        "q_max": h.q_max().map(float).unwrap_or(Value::Null),
        "diffs": h.diffs.iter().map(|&d| float(d)).collect::<Vec<_>>(),
        "ratios": h.ratios.iter().map(|&r| float(r)).collect::<Vec<_>>(),
        "sup_norms": h.sup_norms.iter().map(|&s| float(s)).collect::<Vec<_>>(),
        "lipschitz": h.lipschitz_consts.iter().map(|&l| float(l)).collect::<Vec<_>>(),
        "budget_warnings": h.budget_warnings,
    })
}

fn picard_report(loaded: &LoadedRun, run: &SemiGlobalRun, s_max: f64, n_x: usize, n_t: usize, wall_s: f64) -> Value {
    let windows: Vec<Value> = run
        .windows
        .iter()
        .map(|w| {
            let b = &w.solve.budget;
            json!({
                "t_start": float(w.t_start),
                "t_end": float(w.t_end),
                "horizon": float(w.solve.horizon),
                "budget": {
                    "s_max": float(b.s_max),
                    "b_max": float(b.b_max),
                    "t_max": float(b.t_max),
                    "lambda_lo": float(b.lambda_lo),
                    "lambda_hi": float(b.lambda_hi),
                    "l_data": float(b.l_data),
                    "l_solution": float(b.l_solution),
                    "sigma_max": float(b.sigma_max),
                    "l_sigma": float(b.l_sigma),
                    "junction_gain": float(b.junction_gain),
                },
                "truth": history_json(&w.solve.truth_history),
                "observer": w.solve.observer_history.as_ref().map(history_json).unwrap_or(Value::Null),
                "sup_norm": float(w.solve.observer.as_ref().unwrap_or(&w.solve.truth).sup_norm()),
            })
        })
        .collect();
    json!({
        "scenario": loaded.name,
        "digest": loaded.digest,
        "command": "picard",
        "version": env!("CARGO_PKG_VERSION"),
        "s_max": float(s_max),
        "n_x": n_x,
        "n_t": n_t,
        "t_total": float(loaded.scenario.t_end),
        "tolerance": float(PICARD_TOL),
        "windows": windows,
        "wallclock_s": float(wall_s),
    })
}

/// Fixed-point solve over the scenario horizon; exit 0 means every window
/// contracted (all ratios < 1) with residual at tolerance.
pub fn cmd_picard(config: &Path, opts: &GlobalOpts, windows: Option<usize>, s_max: f64) -> Result<PathBuf, Error> {
    let started = Instant::now();
    let loaded = load(config, opts, &json!({"command": "picard", "windows": windows, "s_max": s_max}))?;
    let n_x = loaded.scenario.cells;
    let n_t = 2 * n_x;
    let run = semi_global_continuation(&loaded.scenario, s_max, n_x, n_t, loaded.scenario.t_end, windows)?;

    // The iteration driver already rejects non-contracting runs; these
    // checks make the exit condition independent of the driver's internals.
    for (k, w) in run.windows.iter().enumerate() {
        let histories =
            [Some(&w.solve.truth_history), w.solve.observer_history.as_ref()];
        for h in histories.into_iter().flatten() {
            if let Some(q) = h.q_max() {
                if q >= 1.0 {
                    return Err(Error::Contraction(format!(
                        "window {}: recorded ratio {q} is not a contraction",
                        k + 1
                    )));
                }
            }
            if !(h.residual <= 2.0 * PICARD_TOL) {
                return Err(Error::Contraction(format!(
                    "window {}: residual {} above tolerance",
                    k + 1,
                    h.residual
                )));
            }
        }
    }

    let dir = out_root(opts).join(&loaded.name);
    ensure_dir(&dir)?;
    let report = picard_report(&loaded, &run, s_max, n_x, n_t, started.elapsed().as_secs_f64());
    fs::write(dir.join("picard.json"), canonical_json(&report))?;
    Ok(dir)
}

/// One sweep row: the parameter value and what came of the run.
pub struct SweepRow {
    pub value: f64,
    pub c2: Option<f64>,
    pub error: Option<String>,
}

/// Run the observer once per parameter value (only `mu` is sweepable),
/// aggregate fitted rates into `sweep.csv`, and keep going past failures.
pub fn cmd_sweep(
    config: &Path,
    opts: &GlobalOpts,
    param: &str,
    values: &[f64],
) -> Result<(PathBuf, Vec<SweepRow>), Error> {
    if param != "mu" {
        return Err(Error::Validation(format!("unsupported sweep parameter {param:?} (only \"mu\")")));
    }
    if values.is_empty() {
        return Err(Error::Validation("sweep needs at least one value".into()));
    }
    let loaded = load(config, opts, &json!({"command": "sweep", "param": param, "values": values}))?;
    if loaded.scenario.mode == MeasurementMode::None {
        return Err(Error::Validation("sweep requires a live measurement mode in the scenario".into()));
    }
    let root = out_root(opts).join(&loaded.name);
    ensure_dir(&root)?;

    let threads = opts.threads.unwrap_or(1).max(1);
    let mut rows: Vec<Option<SweepRow>> = (0..values.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (chunk_idx, chunk) in rows.chunks_mut(values.len().div_ceil(threads)).enumerate() {
            let chunk_start = chunk_idx * values.len().div_ceil(threads);
            let loaded = &loaded;
            let root = &root;
            let opts = &*opts;
            scope.spawn(move || {
                for (offset, slot) in chunk.iter_mut().enumerate() {
                    let value = values[chunk_start + offset];
                    *slot = Some(run_sweep_point(loaded, root, opts, value));
                }
            });
        }
    });
    let rows: Vec<SweepRow> = rows.into_iter().map(|r| r.expect("all slots filled")).collect();

    let mut csv = String::from("mu,c2\n");
    for row in &rows {
        let c2 = row.c2.map(|v| format!("{v:.16e}")).unwrap_or_else(|| "nan".into());
        csv.push_str(&format!("{},{}\n", row.value, c2));
    }
    fs::write(root.join("sweep.csv"), csv)?;

    if rows.iter().all(|r| r.error.is_some()) {
        return Err(Error::Solve(format!(
            "every sweep run failed; first failure: {}",
            rows[0].error.as_deref().unwrap_or("unknown")
        )));
    }
    Ok((root, rows))
}

fn run_sweep_point(loaded: &LoadedRun, root: &Path, opts: &GlobalOpts, value: f64) -> SweepRow {
    let started = Instant::now();
    let mut scenario = loaded.scenario.clone();
    scenario.mu = value;
    let options = RunOptions { strict: opts.strict, ..RunOptions::default() };
    match run_twin(&scenario, options) {
        Ok(run) => {
            let sub = LoadedRun {
                scenario,
                name: format!("{}/mu_{value}", loaded.name),
                digest: loaded.digest.clone(),
            };
            let dir = root.join(format!("mu_{value}"));
            let c2 = run.fit.as_ref().map(|f| f.c2);
            match write_twin_outputs(&dir, &sub, "sweep", &run, started.elapsed().as_secs_f64(), true) {
                Ok(()) => SweepRow { value, c2, error: None },
                Err(e) => SweepRow { value, c2: None, error: Some(e.to_string()) },
            }
        }
        Err(e) => SweepRow { value, c2: None, error: Some(e.to_string()) },
    }
}
