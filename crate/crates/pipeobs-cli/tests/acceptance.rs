//! Acceptance gate: eight end-to-end criteria, one test each, every test
//! printing a single `[Ax] PASS ...` or `[Ax] FAIL ...` line. All tolerances
//! are pinned as constants next to the check they guard.

use std::path::Path;
use std::time::Instant;

use pipeobs::energy::{
    fit_decay, l2_error_sq, norm_equiv_constants, relative_energy,
};
use pipeobs::junction::{couple_node, coupling_residual, invert_boundary_h, invert_boundary_m};
use pipeobs::netmodel::{load_scenario, MeasurementMode, PressureLaw, Scenario};
use pipeobs::observer::{nudging_physical, nudging_riemann};
use pipeobs::picard::{solve_twin, Family, LatticeField};
use pipeobs::riemann::{enthalpy_from_riemann, friction_sigma, from_riemann, to_riemann};
use pipeobs::solver::{from_conservative, run_twin, to_conservative, RunOptions, Stepper};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn report(id: &str, ok: bool, detail: &str) {
    println!("[{id}] {} ({detail})", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "[{id}] FAIL ({detail})");
}

fn scenario_file(name: &str) -> Scenario {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()));
    let mut s = load_scenario(&text).expect("scenario loads");
    s.name = name.trim_end_matches(".json").to_owned();
    s
}

/// Error history `(t, sqrt of squared L2 error)` from a run's series.
fn error_curve(run: &pipeobs::solver::TwinRun) -> Vec<(f64, f64)> {
    run.series.iter().map(|s| (s.t, s.l2_err_sq.sqrt())).collect()
}

// -------------------------------------------------------------------------
// A1: exponential synchronization on a single pipe, velocity measurements.
// -------------------------------------------------------------------------

const A1_HEAD_WINDOW: (f64, f64) = (1.0, 6.0);
const A1_MAX_RESIDUAL: f64 = 0.1;
const A1_FINAL_OVER_INITIAL: f64 = 1e-3;
const A1_MAX_SECONDS: f64 = 30.0;

#[test]
fn a1_single_pipe_velocity_synchronizes_exponentially() {
    let s = scenario_file("single_pipe_pulse.json");
    assert_eq!((s.cells, s.mu, s.gamma, s.t_end), (200, 1.0, 0.1, 20.0));
    assert_eq!(s.mode, MeasurementMode::Velocity);

    let started = Instant::now();
    let run = run_twin(&s, RunOptions::default()).expect("twin run");
    let elapsed = started.elapsed().as_secs_f64();

    let fit = fit_decay(&error_curve(&run), Some(A1_HEAD_WINDOW)).expect("fit");
    let ratio = (run.final_error_sq / run.initial_error_sq).sqrt();
    let ok = fit.c2 > 0.0
        && fit.residual < A1_MAX_RESIDUAL
        && ratio <= A1_FINAL_OVER_INITIAL
        && elapsed <= A1_MAX_SECONDS;
    report(
        "A1",
        ok,
        &format!(
            "c2 = {:.4}, head residual = {:.4}, final/initial L2 = {:.3e}, {:.1}s",
            fit.c2, fit.residual, ratio, elapsed
        ),
    );
}

// -------------------------------------------------------------------------
// A2: density and mass-flux measurements also synchronize; the density-mode
// Lyapunov candidate decreases monotonically after a short grace.
// -------------------------------------------------------------------------

const A2_GRACE_STEPS: usize = 5;

#[test]
fn a2_density_and_massflow_modes_synchronize() {
    let base = scenario_file("single_pipe_pulse.json");

    let mut density = base.clone();
    density.mode = MeasurementMode::Density;
    let run_d = run_twin(&density, RunOptions::default()).expect("density run");
    let fit_d = fit_decay(&error_curve(&run_d), Some(A1_HEAD_WINDOW)).expect("fit");

    let lyap: Vec<f64> = run_d.series.iter().map(|s| s.lyapunov).collect();
    let slack = 1e-15 * (1.0 + lyap[0].abs());
    let mut monotone = true;
    let mut worst = 0.0f64;
    for k in A2_GRACE_STEPS..lyap.len() - 1 {
        let rise = lyap[k + 1] - lyap[k];
        if rise > slack {
            monotone = false;
            worst = worst.max(rise);
        }
    }

    let mut massflow = base.clone();
    massflow.mode = MeasurementMode::MassFlux;
    let run_m = run_twin(&massflow, RunOptions::default()).expect("massflow run");
    let fit_m = fit_decay(&error_curve(&run_m), Some(A1_HEAD_WINDOW)).expect("fit");

    let ok = fit_d.c2 > 0.0 && fit_m.c2 > 0.0 && monotone;
    report(
        "A2",
        ok,
        &format!(
            "density c2 = {:.4}, massflow c2 = {:.4}, lyapunov monotone after {} steps = {} (worst rise {:.2e})",
            fit_d.c2, fit_m.c2, A2_GRACE_STEPS, monotone, worst
        ),
    );
}

// -------------------------------------------------------------------------
// A3: norm-equivalence sandwich on random admissible pairs.
// -------------------------------------------------------------------------

const A3_PAIRS: usize = 10_000;
const A3_MAX_SECONDS: f64 = 5.0;

#[test]
fn a3_relative_energy_sandwich_has_zero_violations() {
    let s = load_scenario(
        r#"{
        "topology": {"nodes": ["n0", "n1"], "edges": [{"name": "e0", "from": "n0", "to": "n1", "length": 1.0}]},
        "law": {"kind": "isothermal", "rho_ref": 1.0, "params": {"c": 1.0}, "band": {"rho_lo": 0.5, "rho_hi": 2.0, "v_bar": 0.1}},
        "physics": {"gamma": 0.1},
        "initial": {"e0": {"rho": {"constant": 1.0}, "v": {"constant": 0.0}}},
        "grid": {"cells": 4, "cfl": 0.5},
        "time": {"T": 0.1}
    }"#,
    )
    .expect("inline scenario");
    let norm = norm_equiv_constants(&s.bounds).expect("band is non-degenerate");

    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20_260_816);
    let mut truth = pipeobs::netmodel::FieldState {
        time: 0.0,
        edges: vec![pipeobs::netmodel::EdgeField { rho: vec![1.0; s.cells], v: vec![0.0; s.cells] }],
    };
    let mut obs = truth.clone();
    let mut violations = 0usize;
    for _ in 0..A3_PAIRS {
        let (rho, v) = (rng.random_range(0.5..2.0), rng.random_range(-0.1..0.1));
        let (rho_hat, v_hat) = (rng.random_range(0.5..2.0), rng.random_range(-0.1..0.1));
        truth.edges[0].rho.fill(rho);
        truth.edges[0].v.fill(v);
        obs.edges[0].rho.fill(rho_hat);
        obs.edges[0].v.fill(v_hat);
        let h = relative_energy(&s, &obs, &truth).expect("positive densities");
        let n2 = l2_error_sq(&s, &obs, &truth);
        if !(h >= 0.0) || norm.c_lo * n2 > h || h > norm.c_hi * n2 {
            violations += 1;
        }
    }
    let elapsed = started.elapsed().as_secs_f64();

    let ok = violations == 0 && elapsed <= A3_MAX_SECONDS;
    report(
        "A3",
        ok,
        &format!(
            "{} pairs, {} violations, c_lo = {:.4}, c_hi = {:.4}, {:.2}s",
            A3_PAIRS, violations, norm.c_lo, norm.c_hi, elapsed
        ),
    );
}

// -------------------------------------------------------------------------
// A4: star network with a conserved mass imbalance plateaus at the
// documented floor; anchoring the enthalpy removes the plateau.
// -------------------------------------------------------------------------

const A4_MAX_DRIFT: f64 = 1e-8;
const A4_PLATEAU_FACTOR: f64 = 10.0;

#[test]
fn a4_mass_imbalance_floors_the_error_unless_enthalpy_is_anchored() {
    let s = scenario_file("star3.json");
    let run = run_twin(&s, RunOptions { stepper: Stepper::Fv, strict: false }).expect("fv run");

    let dm0 = run.mass_difference_initial;
    let drift = (run.mass_difference_final - dm0).abs();
    // Conserved offset spread over three unit pipes: |dm| / sqrt(3).
    let floor = dm0.abs() / (3.0f64).sqrt();
    let fit = run.fit.as_ref().expect("fit present");
    let plateau = fit.plateau;
    let plateau_ok = plateau
        .map(|p| p <= A4_PLATEAU_FACTOR * floor && p >= floor / A4_PLATEAU_FACTOR)
        .unwrap_or(false);

    let sd = scenario_file("star3_density.json");
    let run_d = run_twin(&sd, RunOptions { stepper: Stepper::Fv, strict: false }).expect("fv run");
    let fit_d = run_d.fit.as_ref().expect("fit present");
    let ratio_d = (run_d.final_error_sq / run_d.initial_error_sq).sqrt();

    let ok = drift <= A4_MAX_DRIFT
        && plateau_ok
        && fit.c2 > 0.0
        && fit_d.plateau.is_none()
        && ratio_d <= A1_FINAL_OVER_INITIAL;
    report(
        "A4",
        ok,
        &format!(
            "dM drift = {:.2e}, plateau = {:?} vs floor {:.3e}, pre-plateau c2 = {:.4}; \
             anchored: plateau = {:?}, final/initial = {:.2e}",
            drift, plateau, floor, fit.c2, fit_d.plateau, ratio_d
        ),
    );
}

// -------------------------------------------------------------------------
// A5: certified fixed-point construction contracts and matches the
// characteristic stepper at matched resolution.
// -------------------------------------------------------------------------

const A5_S_MAX: f64 = 0.02;
const A5_N_X: usize = 100;
const A5_N_T: usize = 200;
const A5_MAX_RESIDUAL: f64 = 1e-10;
const A5_MAX_MISMATCH: f64 = 5e-3;
const A5_MAX_SECONDS: f64 = 60.0;

/// Clamped linear interpolation of cell-centered values at position `x`.
fn cell_interp(vals: &[f64], dx: f64, x: f64) -> f64 {
    let u = (x / dx - 0.5).clamp(0.0, (vals.len() - 1) as f64);
    let j = (u.floor() as usize).min(vals.len() - 2);
    let w = u - j as f64;
    vals[j] * (1.0 - w) + vals[j + 1] * w
}

/// Largest invariant gap between a fixed-point lattice and a stepper state
/// at the final time, over interior lattice points.
fn stepper_mismatch(s: &Scenario, field: &LatticeField, state: &pipeobs::netmodel::FieldState) -> f64 {
    let mut worst = 0.0f64;
    let t = field.t_max();
    for (e, edge) in s.topology.edges.iter().enumerate() {
        let dx_cells = edge.length / s.cells as f64;
        let dx_lat = edge.length / field.n_x() as f64;
        for i in 2..field.n_x() - 1 {
            let x = i as f64 * dx_lat;
            let rho = cell_interp(&state.edges[e].rho, dx_cells, x);
            let v = cell_interp(&state.edges[e].v, dx_cells, x);
            let (rp, rm) = to_riemann(&s.law, rho, v).expect("admissible state");
            let sp = field.value(e, Family::Plus, t, x);
            let sm = field.value(e, Family::Minus, t, x);
            worst = worst.max((rp - sp).abs()).max((rm - sm).abs());
        }
    }
    worst
}

#[test]
fn a5_certified_fixed_point_contracts_and_matches_the_stepper() {
    let s = scenario_file("picard_small.json");
    assert_eq!(s.mu, 0.5);

    let started = Instant::now();
    let solve = solve_twin(&s, A5_S_MAX, A5_N_X, A5_N_T, None).expect("certified solve");

    let mut ratios = solve.truth_history.ratios.clone();
    let mut residuals = vec![solve.truth_history.residual];
    let obs_hist = solve.observer_history.as_ref().expect("observer solved");
    ratios.extend_from_slice(&obs_hist.ratios);
    residuals.push(obs_hist.residual);

    let mut moc = s.clone();
    moc.t_end = solve.horizon;
    let run = run_twin(&moc, RunOptions::default()).expect("stepper run");
    let gap_truth = stepper_mismatch(&s, &solve.truth, &run.final_truth);
    let gap_obs = stepper_mismatch(&s, solve.observer.as_ref().expect("observer field"), &run.final_observer);
    let elapsed = started.elapsed().as_secs_f64();

    let q_worst = ratios.iter().copied().fold(0.0f64, f64::max);
    let r_worst = residuals.iter().copied().fold(0.0f64, f64::max);
    let ok = ratios.iter().all(|&q| q < 1.0)
        && r_worst <= A5_MAX_RESIDUAL
        && gap_truth <= A5_MAX_MISMATCH
        && gap_obs <= A5_MAX_MISMATCH
        && elapsed <= A5_MAX_SECONDS;
    report(
        "A5",
        ok,
        &format!(
            "horizon = {:.4e}, worst ratio = {:.3e}, worst residual = {:.2e}, \
             stepper gap = {:.2e}/{:.2e}, {:.1}s",
            solve.horizon, q_worst, r_worst, gap_truth, gap_obs, elapsed
        ),
    );
}

// -------------------------------------------------------------------------
// A6: gain sweep; all runs complete with a positive rate. The rate is not
// monotone in the gain, which is recorded but not asserted.
// -------------------------------------------------------------------------

const A6_GAINS: [f64; 4] = [0.1, 1.0, 10.0, 100.0];

#[test]
fn a6_gain_sweep_completes_with_positive_rates() {
    let base = scenario_file("single_pipe_pulse.json");
    let mut table = Vec::new();
    for mu in A6_GAINS {
        let mut s = base.clone();
        s.mu = mu;
        let run = run_twin(&s, RunOptions::default()).expect("sweep run");
        let fit = fit_decay(&error_curve(&run), Some(A1_HEAD_WINDOW)).expect("fit");
        table.push((mu, fit.c2));
    }
    let ok = table.iter().all(|&(_, c2)| c2 > 0.0);
    let rendered: Vec<String> = table.iter().map(|(mu, c2)| format!("mu={mu}: c2={c2:.4}")).collect();
    report("A6", ok, &rendered.join(", "));
}

// -------------------------------------------------------------------------
// A7: the two steppers converge to each other under refinement, and a pipe
// split in two by a junction converges to the unsplit pipe.
// -------------------------------------------------------------------------

const A7_CELLS: [usize; 3] = [100, 200, 400];
const A7_MIN_SLOPE: f64 = 0.8;
/// Cross-stepper horizon. Kept short deliberately: at matched CFL the two
/// schemes share the same leading numerical diffusion on the invariant
/// waves, so over long horizons their difference is a higher-order residue
/// that stops shrinking at first order even though each scheme still
/// converges. Before that cancellation accumulates, the gap is a clean
/// first-order quantity.
const A7_CROSS_T: f64 = 0.15;

/// Least-squares slope of `log2 d` against `log2 N`, negated so that
/// first-order convergence reads as +1.
fn refinement_slope(cells: &[usize], gaps: &[f64]) -> f64 {
    let n = cells.len() as f64;
    let xs: Vec<f64> = cells.iter().map(|&c| (c as f64).log2()).collect();
    let ys: Vec<f64> = gaps.iter().map(|&g| g.log2()).collect();
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
    -(n * sxy - sx * sy) / (n * sxx - sx * sx)
}

fn smooth_bump(x: f64) -> f64 {
    if x <= 0.3 || x >= 0.7 {
        0.0
    } else {
        (std::f64::consts::PI * (x - 0.3) / 0.4).sin().powi(4)
    }
}

/// Sample the analytic pulse on `[x0, x1]` in edge-local coordinates.
fn pulse_samples(x0: f64, x1: f64, n: usize, f: impl Fn(f64) -> f64) -> serde_json::Value {
    let pts: Vec<[f64; 2]> = (0..=n)
        .map(|i| {
            let x = x0 + (x1 - x0) * i as f64 / n as f64;
            [x - x0, f(x)]
        })
        .collect();
    serde_json::json!({ "samples": pts })
}

fn pulse_topology_config(split: bool, cells: usize, t_end: f64) -> Scenario {
    let v = |x: f64| 0.02 * smooth_bump(x);
    let rho = |x: f64| v(x).exp();
    let (topology, initial) = if split {
        (
            serde_json::json!({
                "nodes": ["n0", "mid", "n1"],
                "edges": [
                    {"name": "e0", "from": "n0", "to": "mid", "length": 0.5},
                    {"name": "e1", "from": "mid", "to": "n1", "length": 0.5}
                ]
            }),
            serde_json::json!({
                "e0": {"rho": pulse_samples(0.0, 0.5, 800, rho), "v": pulse_samples(0.0, 0.5, 800, v)},
                "e1": {"rho": pulse_samples(0.5, 1.0, 800, rho), "v": pulse_samples(0.5, 1.0, 800, v)}
            }),
        )
    } else {
        (
            serde_json::json!({
                "nodes": ["n0", "n1"],
                "edges": [{"name": "e0", "from": "n0", "to": "n1", "length": 1.0}]
            }),
            serde_json::json!({
                "e0": {"rho": pulse_samples(0.0, 1.0, 1600, rho), "v": pulse_samples(0.0, 1.0, 1600, v)}
            }),
        )
    };
    let right = if split { "n1" } else { "n1" };
    let config = serde_json::json!({
        "topology": topology,
        "law": {"kind": "isothermal", "rho_ref": 1.0, "params": {"c": 1.0},
                "band": {"rho_lo": 0.5, "rho_hi": 2.0, "v_bar": 0.1}},
        "physics": {"gamma": 0.1},
        "initial": initial,
        "boundary": [
            {"node": "n0", "quantity": "m", "schedule": {"constant": 0.0}},
            {"node": right, "quantity": "h", "schedule": {"constant": 1.0}}
        ],
        "grid": {"cells": cells, "cfl": 0.5},
        "time": {"T": t_end}
    });
    load_scenario(&config.to_string()).expect("generated scenario loads")
}

#[test]
fn a7_steppers_and_topologies_agree_under_refinement() {
    // MOC vs FV on one pipe.
    let mut cross_gaps = Vec::new();
    for &n in &A7_CELLS {
        let s = pulse_topology_config(false, n, A7_CROSS_T);
        let moc = run_twin(&s, RunOptions { stepper: Stepper::Moc, strict: false }).expect("moc");
        let fv = run_twin(&s, RunOptions { stepper: Stepper::Fv, strict: false }).expect("fv");
        cross_gaps.push(l2_error_sq(&s, &moc.final_truth, &fv.final_truth).sqrt());
    }
    let cross_slope = refinement_slope(&A7_CELLS, &cross_gaps);

    // One pipe vs the same pipe split at the midpoint; cell widths match,
    // so the states compare cell by cell.
    let mut split_gaps = Vec::new();
    for &n in &A7_CELLS {
        let whole = pulse_topology_config(false, n, 1.0);
        let split = pulse_topology_config(true, n / 2, 1.0);
        let a = run_twin(&whole, RunOptions::default()).expect("single pipe").final_truth;
        let b = run_twin(&split, RunOptions::default()).expect("split pipe").final_truth;
        let dx = 1.0 / n as f64;
        let mut total = 0.0;
        for j in 0..n {
            let (edge, k) = if j < n / 2 { (0, j) } else { (1, j - n / 2) };
            let dr = a.edges[0].rho[j] - b.edges[edge].rho[k];
            let dv = a.edges[0].v[j] - b.edges[edge].v[k];
            total += dx * (dr * dr + dv * dv);
        }
        split_gaps.push(total.sqrt());
    }
    let split_slope = refinement_slope(&A7_CELLS, &split_gaps);

    let ok = cross_slope >= A7_MIN_SLOPE && split_slope >= A7_MIN_SLOPE;
    report(
        "A7",
        ok,
        &format!(
            "moc-fv gaps {:?} slope {:.2}; split-pipe gaps {:?} slope {:.2}",
            cross_gaps.iter().map(|g| format!("{g:.2e}")).collect::<Vec<_>>(),
            cross_slope,
            split_gaps.iter().map(|g| format!("{g:.2e}")).collect::<Vec<_>>(),
            split_slope
        ),
    );
}

// -------------------------------------------------------------------------
// A8: micro-properties of the transforms and local solves, at their stated
// tolerances (1e-10 root/round-trip, 1e-12 algebraic identity, 1e-14 exact
// arithmetic).
// -------------------------------------------------------------------------

const TOL_ROOT: f64 = 1e-10;
const TOL_IDENTITY: f64 = 1e-12;
const TOL_EXACT: f64 = 1e-14;

#[test]
fn a8_micro_properties_hold_at_stated_tolerances() {
    let iso = PressureLaw::isothermal(1.0, 1.0).unwrap();
    let pow = PressureLaw::power(0.5, 1.4, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut track = |name: &'static str, v: f64| worst.push((name, v));

    // Conservative pair round trip, exact arithmetic tier.
    let mut w = 0.0f64;
    for _ in 0..100 {
        let (rho, v) = (rng.random_range(0.5..2.0), rng.random_range(-0.1..0.1));
        let (r2, m) = to_conservative(rho, v);
        let (r3, v3) = from_conservative(r2, m).unwrap();
        w = w.max((r3 - rho).abs()).max((v3 - v).abs());
    }
    track("conservative round trip <= 1e-14", w / TOL_EXACT);

    // Invariant transforms round trip both ways, root tier.
    let mut w = 0.0f64;
    for law in [&iso, &pow] {
        for _ in 0..100 {
            let (rho, v) = (rng.random_range(0.5..2.0), rng.random_range(-0.1..0.1));
            let (sp, sm) = to_riemann(law, rho, v).unwrap();
            let (r2, v2) = from_riemann(law, sp, sm).unwrap();
            w = w.max((r2 - rho).abs()).max((v2 - v).abs());
            let (sp0, sm0) = (rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05));
            let (r3, v3) = from_riemann(law, sp0, sm0).unwrap();
            let (sp1, sm1) = to_riemann(law, r3, v3).unwrap();
            w = w.max((sp1 - sp0).abs()).max((sm1 - sm0).abs());
        }
    }
    track("riemann round trips <= 1e-10", w / TOL_ROOT);

    // Density coordinate inversion, root tier (relative).
    let mut w = 0.0f64;
    for law in [&iso, &pow] {
        for _ in 0..100 {
            let rho = rng.random_range(0.5..2.0);
            let back = law.rho_from_coordinate(law.rho_coordinate(rho)).unwrap();
            w = w.max((back - rho).abs() / rho);
        }
    }
    track("coordinate inversion <= 1e-10 relative", w / TOL_ROOT);

    // Friction in invariant form equals (gamma/c) |v| v, identity tier.
    let mut w = 0.0f64;
    for _ in 0..100 {
        let (sp, sm) = (rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05));
        let (_, v) = from_riemann(&iso, sp, sm).unwrap();
        let direct = 0.1 / iso.sound_ref() * v.abs() * v;
        w = w.max((friction_sigma(&iso, 0.1, sp, sm) - direct).abs());
    }
    track("friction identity <= 1e-12", w / TOL_IDENTITY);

    // Rest state maps to the origin in invariants, exactly.
    let (sp, sm) = to_riemann(&iso, 1.0, 0.0).unwrap();
    track("rest state at origin", (sp.abs() + sm.abs()) / TOL_EXACT);

    // Nudging: zero gain and mode `none` vanish; invariant form matches the
    // projected physical form, identity tier.
    let mut w = 0.0f64;
    let c = iso.sound_ref();
    for _ in 0..100 {
        let truth = (rng.random_range(0.8..1.2), rng.random_range(-0.05..0.05));
        let obs = (rng.random_range(0.8..1.2), rng.random_range(-0.05..0.05));
        let tr = to_riemann(&iso, truth.0, truth.1).unwrap();
        let os = to_riemann(&iso, obs.0, obs.1).unwrap();

        let z = nudging_riemann(&iso, MeasurementMode::Velocity, 0.0, tr, os).unwrap();
        assert_eq!(z, (0.0, 0.0));
        let z = nudging_riemann(&iso, MeasurementMode::None, 2.0, tr, os).unwrap();
        assert_eq!(z, (0.0, 0.0));

        let mu = 2.0;
        let lv = nudging_physical(&iso, MeasurementMode::Velocity, mu, truth, obs).unwrap().l_v;
        let (gp, gm) = nudging_riemann(&iso, MeasurementMode::Velocity, mu, tr, os).unwrap();
        w = w.max((gp - lv / c).abs()).max((gm + lv / c).abs());

        let lr = nudging_physical(&iso, MeasurementMode::Density, mu, truth, obs).unwrap().l_rho;
        let proj = iso.sound_speed(obs.0) / (c * obs.0) * lr;
        let (gp, gm) = nudging_riemann(&iso, MeasurementMode::Density, mu, tr, os).unwrap();
        w = w.max((gp - proj).abs()).max((gm - proj).abs());

        let lv = nudging_physical(&iso, MeasurementMode::MassFlux, mu, truth, obs).unwrap().l_v;
        let (gp, gm) = nudging_riemann(&iso, MeasurementMode::MassFlux, mu, tr, os).unwrap();
        w = w.max((gp - lv / c).abs()).max((gm + lv / c).abs());
    }
    track("nudging projections <= 1e-12", w / TOL_IDENTITY);

    // Junction solve residuals on random small-data node problems and the
    // transparent two-pipe case, root tier.
    let mut w = 0.0f64;
    for degree in 2..=5 {
        for _ in 0..250 {
            let r_in: Vec<f64> = (0..degree).map(|_| rng.random_range(-0.02..0.02)).collect();
            let r_out = couple_node(&iso, &r_in, None).unwrap();
            let res = coupling_residual(&iso, &r_out, &r_in).unwrap();
            w = w.max(res.iter().fold(0.0f64, |a, &r| a.max(r.abs())));
        }
    }
    let a = 0.013;
    let passthrough = couple_node(&iso, &[a, a], None).unwrap();
    w = w.max((passthrough[0] - a).abs()).max((passthrough[1] - a).abs());
    track("junction residuals <= 1e-10", w / TOL_ROOT);

    // Boundary inversions hit their datum, root tier.
    let mut w = 0.0f64;
    for _ in 0..100 {
        let r_in = rng.random_range(-0.02..0.02);
        let m_b = rng.random_range(-0.01..0.01);
        let r_out = invert_boundary_m(&iso, m_b, r_in, None).unwrap();
        let rho = iso.rho_from_coordinate(0.5 * (r_out + r_in)).unwrap();
        w = w.max((rho * 0.5 * c * (r_out - r_in) - m_b).abs());

        let h_b = 1.0 + rng.random_range(-0.01..0.01);
        let r_out = invert_boundary_h(&iso, h_b, r_in, None).unwrap();
        w = w.max((enthalpy_from_riemann(&iso, r_out, r_in).unwrap() - h_b).abs());
    }
    track("boundary inversions <= 1e-10", w / TOL_ROOT);

    // Relative energy vanishes exactly on identical states and is positive on
    // distinct ones.
    let s = scenario_file("single_pipe_rest.json");
    let state = pipeobs::netmodel::FieldState {
        time: 0.0,
        edges: vec![pipeobs::netmodel::EdgeField { rho: vec![1.1; s.cells], v: vec![0.05; s.cells] }],
    };
    let zero = relative_energy(&s, &state, &state).unwrap();
    let mut other = state.clone();
    other.edges[0].rho[0] += 0.1;
    let positive = relative_energy(&s, &other, &state).unwrap();
    assert!(positive > 0.0);
    track("relative energy of identical states", zero.abs() / TOL_EXACT);

    let ok = worst.iter().all(|&(_, frac)| frac <= 1.0);
    let worst_line = worst
        .iter()
        .map(|(name, frac)| format!("{name}: {:.2}%", frac * 100.0))
        .collect::<Vec<_>>()
        .join("; ");
    report("A8", ok, &format!("margins used: {worst_line}"));
}
