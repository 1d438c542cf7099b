//! End-to-end tests that drive the compiled binary the way a user would:
//! real argv, real files, real exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pipeobs_cli::series::read_series;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pipeobs"));
    // Keep the ambient environment from leaking an output root into tests.
    cmd.env_remove("PIPEOBS_OUT");
    cmd
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary should spawn")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&read(&dir.join("summary.json"))).expect("summary.json parses")
}

/// A minimal single-pipe config with the profiles and horizon left to the
/// caller. Rest boundary data: mass flux pinned at the left node, enthalpy
/// at the right.
fn pipe_config(rho: &str, v: &str, observer: Option<(&str, &str)>, mu: f64, mode: &str, t: f64, cells: u32) -> String {
    let observer = observer
        .map(|(r, w)| format!(r#""observer_initial": {{"e0": {{"rho": {r}, "v": {w}}}}},"#))
        .unwrap_or_default();
    format!(
        r#"{{
  "topology": {{"nodes": ["n0", "n1"], "edges": [{{"name": "e0", "from": "n0", "to": "n1", "length": 1.0}}]}},
  "law": {{"kind": "isothermal", "rho_ref": 1.0, "params": {{"c": 1.0}}, "band": {{"rho_lo": 0.5, "rho_hi": 2.0, "v_bar": 0.1}}}},
  "physics": {{"gamma": 0.1, "mu": {mu}, "mode": "{mode}"}},
  "initial": {{"e0": {{"rho": {rho}, "v": {v}}}}},
  {observer}
  "boundary": [
    {{"node": "n0", "quantity": "m", "schedule": {{"constant": 0.0}}}},
    {{"node": "n1", "quantity": "h", "schedule": {{"constant": 1.0}}}}
  ],
  "grid": {{"cells": {cells}, "cfl": 0.5}},
  "time": {{"T": {t}}}
}}"#
    )
}

#[test]
fn simulate_rest_config_exits_zero_with_constant_series() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(bin().args(["--out"]).arg(tmp.path()).arg("simulate").arg(scenario("single_pipe_rest.json")));
    assert!(out.status.success(), "{}", stderr(&out));

    let dir = tmp.path().join("single_pipe_rest");
    let rows = read_series(&read(&dir.join("series.csv"))).expect("series parses");
    assert!(rows.len() > 10);
    for row in &rows {
        assert_eq!(row.l2_err_sq, 0.0);
        assert_eq!(row.h_rel, 0.0);
        assert!(row.max_v.abs() < 1e-13, "rest state should stay at rest, max_v = {}", row.max_v);
    }
    let s = summary(&dir);
    assert_eq!(s["command"], "simulate");
    assert_eq!(s["mode"], "none");
}

#[test]
fn malformed_config_exits_one_with_position() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("broken.json");
    std::fs::write(&bad, "{ \"topology\": [,]\n}").unwrap();
    let out = run(bin().args(["--out"]).arg(tmp.path()).arg("simulate").arg(&bad));
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    let msg = stderr(&out);
    assert!(msg.contains("line") && msg.contains("column"), "wanted a position in: {msg}");
}

#[test]
fn simulate_pulse_series_is_monotone_and_finite() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(bin()
        .args(["--out"])
        .arg(tmp.path())
        .args(["--cells", "50", "simulate"])
        .arg(scenario("single_pipe_pulse.json")));
    assert!(out.status.success(), "{}", stderr(&out));

    let rows = read_series(&read(&tmp.path().join("single_pipe_pulse/series.csv"))).unwrap();
    for pair in rows.windows(2) {
        assert!(pair[1].t > pair[0].t, "time column must increase");
    }
    for row in &rows {
        for field in [row.t, row.l2_err_sq, row.h_rel, row.f_aux, row.lyapunov, row.delta_m, row.max_v, row.dt] {
            assert!(field.is_finite());
        }
    }
}

#[test]
fn observe_with_identical_initials_stays_synchronized() {
    let tmp = tempfile::tempdir().unwrap();
    // No observer block: the observer starts from the truth data.
    let out = run(bin()
        .args(["--out"])
        .arg(tmp.path())
        .arg("observe")
        .arg(scenario("single_pipe_rest.json"))
        .args(["--mode", "velocity", "--mu", "1.0"]));
    assert!(out.status.success(), "{}", stderr(&out));

    let rows = read_series(&read(&tmp.path().join("single_pipe_rest/series.csv"))).unwrap();
    for row in &rows {
        assert!(row.l2_err_sq < 1e-24, "synchronized twin drifted: {}", row.l2_err_sq);
    }
}

#[test]
fn observe_perturbed_velocity_reports_positive_rate() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(bin()
        .args(["--out"])
        .arg(tmp.path())
        .args(["--cells", "100", "observe"])
        .arg(scenario("single_pipe_pulse.json"))
        .args(["--mode", "velocity", "--mu", "1.0", "--perturb", "0.01"]));
    assert!(out.status.success(), "{}", stderr(&out));

    let dir = tmp.path().join("single_pipe_pulse");
    let s = summary(&dir);
    let c2 = s["fit"]["c2"].as_f64().expect("fit.c2 present");
    assert!(c2 > 0.0, "decay rate should be positive, got {c2}");
    let svg = read(&dir.join("decay.svg"));
    assert!(svg.starts_with("<svg") && svg.contains("polyline"));
}

#[test]
fn observe_star_massflow_reports_plateau_near_mass_offset() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(bin()
        .args(["--out"])
        .arg(tmp.path())
        .arg("observe")
        .arg(scenario("star3.json"))
        .args(["--mode", "massflow"]));
    assert!(out.status.success(), "{}", stderr(&out));

    let s = summary(&tmp.path().join("star3"));
    let dm0 = s["mass_difference_initial"].as_f64().unwrap();
    assert!((dm0.abs() - 1e-3).abs() < 1e-4, "mass offset should be about 1e-3, got {dm0}");
    let plateau = s["fit"]["plateau"].as_f64().expect("plateau reported");
    // Conserved mass imbalance spread over three unit pipes floors the
    // error at |dM|/sqrt(3).
    let floor = dm0.abs() / 3f64.sqrt();
    assert!(plateau / floor < 10.0 && floor / plateau < 10.0, "plateau {plateau} vs floor {floor}");
}

#[test]
fn strict_mode_turns_audit_failure_into_exit_three() {
    let tmp = tempfile::tempdir().unwrap();
    // Observer density sits above the certified band.
    let cfg = tmp.path().join("out_of_band.json");
    std::fs::write(
        &cfg,
        pipe_config(
            r#"{"constant": 1.0}"#,
            r#"{"constant": 0.0}"#,
            Some((r#"{"constant": 2.5}"#, r#"{"constant": 0.0}"#)),
            1.0,
            "velocity",
            0.5,
            32,
        ),
    )
    .unwrap();
    let out = run(bin().args(["--out"]).arg(tmp.path()).args(["--strict", "observe"]).arg(&cfg));
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn picard_zero_data_converges_in_one_iteration() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("rest_short.json");
    std::fs::write(
        &cfg,
        pipe_config(r#"{"constant": 1.0}"#, r#"{"constant": 0.0}"#, None, 0.5, "velocity", 0.01, 32),
    )
    .unwrap();
    let out = run(bin().args(["--out"]).arg(tmp.path()).arg("picard").arg(&cfg));
    assert!(out.status.success(), "{}", stderr(&out));

    let report: serde_json::Value =
        serde_json::from_str(&read(&tmp.path().join("rest_short/picard.json"))).unwrap();
    let windows = report["windows"].as_array().unwrap();
    assert_eq!(windows.len(), 1);
    assert_eq!(windows[0]["truth"]["iterations"], 1);
}

#[test]
fn picard_certified_small_data_exits_zero_with_contracting_ratios() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(bin().args(["--out"]).arg(tmp.path()).arg("picard").arg(scenario("picard_small.json")));
    assert!(out.status.success(), "{}", stderr(&out));

    let report: serde_json::Value =
        serde_json::from_str(&read(&tmp.path().join("picard_small/picard.json"))).unwrap();
    for window in report["windows"].as_array().unwrap() {
        for side in ["truth", "observer"] {
            let hist = &window[side];
            if hist.is_null() {
                continue;
            }
            assert_eq!(hist["converged"], true);
            assert!(hist["q_max"].as_f64().unwrap() < 1.0);
        }
    }
}

#[test]
fn picard_oversized_data_exits_four() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("oversized.json");
    // A unit velocity ramp puts the invariants fifty times outside the
    // certified ball.
    std::fs::write(
        &cfg,
        pipe_config(r#"{"constant": 1.0}"#, r#"{"linear": [0.0, 1.0]}"#, None, 0.0, "none", 0.01, 32),
    )
    .unwrap();
    let out = run(bin().args(["--out"]).arg(tmp.path()).arg("picard").arg(&cfg));
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
}

#[test]
fn sweep_with_single_value_matches_observe() {
    let tmp = tempfile::tempdir().unwrap();
    let sweep_out = tmp.path().join("sweep");
    let observe_out = tmp.path().join("observe");

    let out = run(bin()
        .args(["--out"])
        .arg(&sweep_out)
        .args(["--cells", "50", "sweep"])
        .arg(scenario("single_pipe_pulse.json"))
        .args(["--param", "mu", "--values", "1"]));
    assert!(out.status.success(), "{}", stderr(&out));

    let out = run(bin()
        .args(["--out"])
        .arg(&observe_out)
        .args(["--cells", "50", "observe"])
        .arg(scenario("single_pipe_pulse.json"))
        .args(["--mu", "1"]));
    assert!(out.status.success(), "{}", stderr(&out));

    let from_sweep = read(&sweep_out.join("single_pipe_pulse/mu_1/series.csv"));
    let from_observe = read(&observe_out.join("single_pipe_pulse/series.csv"));
    assert_eq!(from_sweep, from_observe, "degenerate sweep must reproduce the observe run");
}

#[test]
fn sweep_without_values_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(bin()
        .args(["--out"])
        .arg(tmp.path())
        .arg("sweep")
        .arg(scenario("single_pipe_pulse.json"))
        .args(["--param", "mu"]));
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(stderr(&out).contains("at least one value"));
}

#[test]
fn sweep_records_failures_and_continues() {
    let tmp = tempfile::tempdir().unwrap();
    // Negative gain fails validation inside the run; the sweep should
    // still finish the good value and exit zero.
    let out = run(bin()
        .args(["--out"])
        .arg(tmp.path())
        .args(["--cells", "50", "sweep"])
        .arg(scenario("single_pipe_pulse.json"))
        .args(["--param", "mu", "--values=-1,1"]));
    assert!(out.status.success(), "{}", stderr(&out));

    let csv = read(&tmp.path().join("single_pipe_pulse/sweep.csv"));
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("mu,c2"));
    let first = lines.next().unwrap();
    assert!(first.starts_with("-1,nan"), "failed run should record nan: {first}");
    let second = lines.next().unwrap();
    assert!(second.starts_with("1,") && !second.contains("nan"), "{second}");
}

#[test]
fn single_threaded_reruns_are_bit_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for sub in ["a", "b"] {
        let dir = tmp.path().join(sub);
        let out = run(bin()
            .args(["--out"])
            .arg(&dir)
            .args(["--cells", "50", "--threads", "1", "observe"])
            .arg(scenario("single_pipe_pulse.json"))
            .args(["--mu", "1"]));
        assert!(out.status.success(), "{}", stderr(&out));
        let series = read(&dir.join("single_pipe_pulse/series.csv"));
        let digest = summary(&dir.join("single_pipe_pulse"))["digest"].as_str().unwrap().to_owned();
        outputs.push((series, digest));
    }
    assert_eq!(outputs[0].0, outputs[1].0, "series.csv must be bit-identical");
    assert_eq!(outputs[0].1, outputs[1].1, "config digests must agree");
}

#[test]
fn out_env_variable_sets_the_default_root() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(bin()
        .env("PIPEOBS_OUT", tmp.path())
        .arg("simulate")
        .arg(scenario("single_pipe_rest.json")));
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(tmp.path().join("single_pipe_rest/series.csv").exists());
}

#[test]
fn emitted_csv_round_trips_through_the_reader() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(bin()
        .args(["--out"])
        .arg(tmp.path())
        .args(["--cells", "50", "observe"])
        .arg(scenario("single_pipe_pulse.json")));
    assert!(out.status.success(), "{}", stderr(&out));

    let text = read(&tmp.path().join("single_pipe_pulse/series.csv"));
    let rows = read_series(&text).unwrap();
    assert_eq!(pipeobs_cli::series::write_series(&rows), text);
}
