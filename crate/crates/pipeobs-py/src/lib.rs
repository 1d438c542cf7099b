//! Python extension module for the pipeobs library.
//!
//! Exposes the pressure-law algebra, characteristic conversions, node
//! coupling, observer nudging terms, scenario loading, the twin-simulation
//! driver, decay fitting, and the certified fixed-point solver. Everything
//! heavy releases the interpreter lock while it runs.

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use pipeobs::energy::{self, DecayFit};
use pipeobs::junction;
use pipeobs::netmodel::{self, Band, MeasurementMode, PressureLaw};
use pipeobs::observer;
use pipeobs::picard::{self, ContractionHistory};
use pipeobs::riemann;
use pipeobs::solver::{self, RunOptions, Stepper, TwinRun};

/// Map library errors onto Python exception types: bad inputs and domain
/// violations become `ValueError`, solver-side failures `RuntimeError`, and
/// filesystem problems `OSError`.
fn to_py(e: pipeobs::Error) -> PyErr {
    use pipeobs::Error as E;
    let msg = e.to_string();
    match e {
        E::Parse(_) | E::Validation(_) | E::Domain(_) | E::Budget(_) | E::Diagnostic(_) => {
            PyValueError::new_err(msg)
        }
        E::Solve(_) | E::Solver { .. } | E::StrictAudit(_) | E::Contraction(_) => {
            PyRuntimeError::new_err(msg)
        }
        E::Io(_) => PyOSError::new_err(msg),
    }
}

fn parse_mode(mode: &str) -> PyResult<MeasurementMode> {
    MeasurementMode::parse(mode).map_err(to_py)
}

// ---------------------------------------------------------------------------
// Pressure law and pointwise operations
// ---------------------------------------------------------------------------

/// A barotropic pressure law together with the pointwise operations built on
/// it: potential algebra, Riemann-invariant conversions, node coupling,
/// boundary inversion, and nudging terms.
#[pyclass(frozen, skip_from_py_object, module = "pipeobs_py")]
#[derive(Clone)]
struct Law {
    inner: PressureLaw,
}

#[pymethods]
impl Law {
    /// `p(rho) = c^2 rho` with constant sound speed `c`.
    #[staticmethod]
    #[pyo3(signature = (c, rho_ref = 1.0))]
    fn isothermal(c: f64, rho_ref: f64) -> PyResult<Self> {
        Ok(Self { inner: PressureLaw::isothermal(c, rho_ref).map_err(to_py)? })
    }

    /// `p(rho) = kappa rho^alpha` with `alpha > 1`.
    #[staticmethod]
    #[pyo3(signature = (kappa, alpha, rho_ref = 1.0))]
    fn power(kappa: f64, alpha: f64, rho_ref: f64) -> PyResult<Self> {
        Ok(Self { inner: PressureLaw::power(kappa, alpha, rho_ref).map_err(to_py)? })
    }

    #[getter]
    fn rho_ref(&self) -> f64 {
        self.inner.rho_ref()
    }

    /// Sound speed at the reference density.
    #[getter]
    fn sound_ref(&self) -> f64 {
        self.inner.sound_ref()
    }

    fn pressure(&self, rho: f64) -> f64 {
        self.inner.pressure(rho)
    }

    fn dpressure(&self, rho: f64) -> f64 {
        self.inner.dpressure(rho)
    }

    fn sound_speed(&self, rho: f64) -> f64 {
        self.inner.sound_speed(rho)
    }

    /// Pressure potential `P` with the gauge `P(rho_ref) = 0`.
    fn potential(&self, rho: f64) -> f64 {
        self.inner.potential(rho)
    }

    fn dpotential(&self, rho: f64) -> f64 {
        self.inner.dpotential(rho)
    }

    /// Density coordinate used by the Riemann invariants.
    fn rho_coordinate(&self, rho: f64) -> f64 {
        self.inner.rho_coordinate(rho)
    }

    /// Inverse of `rho_coordinate`.
    fn rho_from_coordinate(&self, y: f64) -> PyResult<f64> {
        self.inner.rho_from_coordinate(y).map_err(to_py)
    }

    /// Every law evaluation at one density, as a dict.
    fn bundle<'py>(&self, py: Python<'py>, rho: f64) -> PyResult<Bound<'py, PyDict>> {
        let b = self.inner.bundle(rho).map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("pressure", b.pressure)?;
        d.set_item("dpressure", b.dpressure)?;
        d.set_item("potential", b.potential)?;
        d.set_item("dpotential", b.dpotential)?;
        d.set_item("d2potential", b.d2potential)?;
        d.set_item("rho_coordinate", b.rho_coordinate)?;
        Ok(d)
    }

    /// `(rho, v)` to the invariant pair `(s_plus, s_minus)`.
    fn to_riemann(&self, rho: f64, v: f64) -> PyResult<(f64, f64)> {
        riemann::to_riemann(&self.inner, rho, v).map_err(to_py)
    }

    /// Invariant pair back to `(rho, v)`.
    fn from_riemann(&self, s_plus: f64, s_minus: f64) -> PyResult<(f64, f64)> {
        riemann::from_riemann(&self.inner, s_plus, s_minus).map_err(to_py)
    }

    /// Characteristic speeds `(lambda_plus, lambda_minus) = v ± sound_speed`.
    fn eigenvalues(&self, rho: f64, v: f64) -> (f64, f64) {
        riemann::eigenvalues(&self.inner, rho, v)
    }

    /// Total specific enthalpy `v^2/2 + P'(rho)`.
    fn enthalpy(&self, rho: f64, v: f64) -> f64 {
        riemann::enthalpy(&self.inner, rho, v)
    }

    /// Friction source on the invariants, from the invariant pair.
    fn friction_sigma(&self, gamma: f64, s_plus: f64, s_minus: f64) -> f64 {
        riemann::friction_sigma(&self.inner, gamma, s_plus, s_minus)
    }

    /// Solve the node coupling: incoming invariants in, outgoing invariants
    /// out, conserving mass and matching enthalpy across the node.
    #[pyo3(signature = (r_in, warm = None))]
    fn couple_node(&self, r_in: Vec<f64>, warm: Option<Vec<f64>>) -> PyResult<Vec<f64>> {
        junction::couple_node(&self.inner, &r_in, warm.as_deref()).map_err(to_py)
    }

    /// Residuals of the coupling system at a candidate outgoing set.
    fn coupling_residual(&self, r_out: Vec<f64>, r_in: Vec<f64>) -> PyResult<Vec<f64>> {
        junction::coupling_residual(&self.inner, &r_out, &r_in).map_err(to_py)
    }

    /// Outgoing invariant at a boundary node with prescribed mass flux.
    #[pyo3(signature = (m_node, r_in, warm = None))]
    fn invert_boundary_m(&self, m_node: f64, r_in: f64, warm: Option<f64>) -> PyResult<f64> {
        junction::invert_boundary_m(&self.inner, m_node, r_in, warm).map_err(to_py)
    }

    /// Outgoing invariant at a boundary node with prescribed enthalpy.
    #[pyo3(signature = (h_node, r_in, warm = None))]
    fn invert_boundary_h(&self, h_node: f64, r_in: f64, warm: Option<f64>) -> PyResult<f64> {
        junction::invert_boundary_h(&self.inner, h_node, r_in, warm).map_err(to_py)
    }

    /// Physical nudging sources `(l_rho, l_v)` for a measurement mode.
    fn nudging_physical(
        &self,
        mode: &str,
        mu: f64,
        truth: (f64, f64),
        obs: (f64, f64),
    ) -> PyResult<(f64, f64)> {
        let n = observer::nudging_physical(&self.inner, parse_mode(mode)?, mu, truth, obs)
            .map_err(to_py)?;
        Ok((n.l_rho, n.l_v))
    }

    /// Nudging sources on the observer invariants `(source_plus, source_minus)`.
    fn nudging_riemann(
        &self,
        mode: &str,
        mu: f64,
        truth_r: (f64, f64),
        obs_s: (f64, f64),
    ) -> PyResult<(f64, f64)> {
        observer::nudging_riemann(&self.inner, parse_mode(mode)?, mu, truth_r, obs_s).map_err(to_py)
    }

    /// Norm-equivalence constants `(c_lo, c_hi)` sandwiching the relative
    /// energy by the squared L2 error on the band `[rho_lo, rho_hi]` with
    /// velocity bound `v_bar`.
    fn norm_constants(&self, rho_lo: f64, rho_hi: f64, v_bar: f64) -> PyResult<(f64, f64)> {
        let band = Band { rho_lo, rho_hi, v_bar };
        let bounds = self.inner.bound_constants(&band).map_err(to_py)?;
        let n = energy::norm_equiv_constants(&bounds).map_err(to_py)?;
        Ok((n.c_lo, n.c_hi))
    }

    fn __repr__(&self) -> String {
        match self.inner {
            PressureLaw::Isothermal { c, rho_ref } => {
                format!("Law.isothermal(c={c}, rho_ref={rho_ref})")
            }
            PressureLaw::Power { kappa, alpha, rho_ref } => {
                format!("Law.power(kappa={kappa}, alpha={alpha}, rho_ref={rho_ref})")
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Scenario
// ---------------------------------------------------------------------------

/// A validated simulation setup: topology, law, initial and boundary data,
/// grid and time controls.
#[pyclass(frozen, module = "pipeobs_py")]
struct Scenario {
    inner: netmodel::Scenario,
}

#[pymethods]
impl Scenario {
    /// Parse and validate a scenario from JSON text.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: netmodel::load_scenario(text).map_err(to_py)? })
    }

    /// Read, parse, and validate a scenario file.
    #[staticmethod]
    fn from_file(path: &str) -> PyResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PyOSError::new_err(format!("{path}: {e}")))?;
        Ok(Self { inner: netmodel::load_scenario(&text).map_err(to_py)? })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn law(&self) -> Law {
        Law { inner: self.inner.law }
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma
    }

    #[getter]
    fn mu(&self) -> f64 {
        self.inner.mu
    }

    #[getter]
    fn mode(&self) -> &'static str {
        self.inner.mode.as_str()
    }

    #[getter]
    fn cells(&self) -> usize {
        self.inner.cells
    }

    #[getter]
    fn cfl(&self) -> f64 {
        self.inner.cfl
    }

    #[getter]
    fn t_end(&self) -> f64 {
        self.inner.t_end
    }

    #[getter]
    fn node_names(&self) -> Vec<String> {
        self.inner.topology.nodes.clone()
    }

    #[getter]
    fn edge_names(&self) -> Vec<String> {
        self.inner.topology.edges.iter().map(|e| e.name.clone()).collect()
    }

    #[getter]
    fn edge_lengths(&self) -> Vec<f64> {
        self.inner.topology.edges.iter().map(|e| e.length).collect()
    }

    /// Cell-center positions on one edge.
    fn cell_centers(&self, edge: usize) -> PyResult<Vec<f64>> {
        if edge >= self.inner.topology.edges.len() {
            return Err(PyValueError::new_err(format!("no edge with index {edge}")));
        }
        Ok(self.inner.cell_centers(edge))
    }

    /// Initial fields sampled at the cell centers, keyed by edge name, each
    /// entry a dict with `rho` and `v` lists.
    #[pyo3(signature = (observer = false))]
    fn initial_fields<'py>(&self, py: Python<'py>, observer: bool) -> PyResult<Bound<'py, PyDict>> {
        let state = self.inner.initial_state(observer);
        fields_dict(py, &self.inner, &state)
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(name={:?}, edges={}, cells={}, mode={:?}, mu={})",
            self.inner.name,
            self.inner.topology.edges.len(),
            self.inner.cells,
            self.inner.mode.as_str(),
            self.inner.mu,
        )
    }
}

fn fields_dict<'py>(
    py: Python<'py>,
    scenario: &netmodel::Scenario,
    state: &netmodel::FieldState,
) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new(py);
    for (edge, field) in scenario.topology.edges.iter().zip(&state.edges) {
        let entry = PyDict::new(py);
        entry.set_item("rho", field.rho.clone())?;
        entry.set_item("v", field.v.clone())?;
        out.set_item(&edge.name, entry)?;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Decay fit
// ---------------------------------------------------------------------------

/// Exponential fit `err(t) ~ c1 exp(-c2 t)` of an error history.
#[pyclass(frozen, skip_from_py_object, module = "pipeobs_py")]
#[derive(Clone)]
struct Fit {
    inner: DecayFit,
}

#[pymethods]
impl Fit {
    #[getter]
    fn c1(&self) -> f64 {
        self.inner.c1
    }

    /// Fitted decay rate; positive means the error shrinks.
    #[getter]
    fn c2(&self) -> f64 {
        self.inner.c2
    }

    #[getter]
    fn window(&self) -> (f64, f64) {
        self.inner.window
    }

    /// RMS residual of the fit in log space.
    #[getter]
    fn residual(&self) -> f64 {
        self.inner.residual
    }

    /// Detected error floor, if the series flattens.
    #[getter]
    fn plateau(&self) -> Option<f64> {
        self.inner.plateau
    }

    #[getter]
    fn n_used(&self) -> usize {
        self.inner.n_used
    }

    #[getter]
    fn non_decaying(&self) -> bool {
        self.inner.non_decaying
    }

    #[getter]
    fn already_synchronized(&self) -> bool {
        self.inner.already_synchronized
    }

    fn __repr__(&self) -> String {
        format!(
            "Fit(c1={:.6e}, c2={:.6}, window=({:.3}, {:.3}), residual={:.3e})",
            self.inner.c1, self.inner.c2, self.inner.window.0, self.inner.window.1, self.inner.residual,
        )
    }
}

/// Fit an exponential decay rate to `(t, err)` samples by least squares on
/// `log err`. `window` restricts the fit to `[t0, t1]`.
#[pyfunction]
#[pyo3(signature = (samples, window = None))]
fn fit_decay(samples: Vec<(f64, f64)>, window: Option<(f64, f64)>) -> PyResult<Fit> {
    Ok(Fit { inner: energy::fit_decay(&samples, window).map_err(to_py)? })
}

// ---------------------------------------------------------------------------
// Twin run
// ---------------------------------------------------------------------------

/// Results of one truth/observer twin simulation.
#[pyclass(frozen, module = "pipeobs_py")]
struct TwinSummary {
    run: TwinRun,
    edge_names: Vec<String>,
}

#[pymethods]
impl TwinSummary {
    #[getter]
    fn steps(&self) -> usize {
        self.run.steps
    }

    #[getter]
    fn initial_error_sq(&self) -> f64 {
        self.run.initial_error_sq
    }

    #[getter]
    fn final_error_sq(&self) -> f64 {
        self.run.final_error_sq
    }

    #[getter]
    fn mass_difference_initial(&self) -> f64 {
        self.run.mass_difference_initial
    }

    #[getter]
    fn mass_difference_final(&self) -> f64 {
        self.run.mass_difference_final
    }

    /// Weight of the auxiliary functional in the Lyapunov candidate.
    #[getter]
    fn delta(&self) -> f64 {
        self.run.delta
    }

    /// Norm-equivalence constants `(c_lo, c_hi)` used by the diagnostics.
    #[getter]
    fn norm_constants(&self) -> (f64, f64) {
        (self.run.norm.c_lo, self.run.norm.c_hi)
    }

    /// Exponential fit of the error history, when one could be made.
    #[getter]
    fn fit(&self) -> Option<Fit> {
        self.run.fit.clone().map(|inner| Fit { inner })
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.run.warnings.clone()
    }

    /// True when every enforced model assumption held over the run.
    #[getter]
    fn audit_ok(&self) -> bool {
        self.run.audit.hard_ok
    }

    /// Per-assumption audit outcomes `(name, satisfied, margin, detail)`.
    #[getter]
    fn audit_checks(&self) -> Vec<(String, bool, f64, String)> {
        self.run
            .audit
            .checks
            .iter()
            .map(|c| (c.name.to_string(), c.satisfied, c.margin, c.detail.clone()))
            .collect()
    }

    /// Diagnostics series as a dict of equal-length columns.
    fn series<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let s = &self.run.series;
        let d = PyDict::new(py);
        d.set_item("t", s.iter().map(|r| r.t).collect::<Vec<_>>())?;
        d.set_item("l2_err_sq", s.iter().map(|r| r.l2_err_sq).collect::<Vec<_>>())?;
        d.set_item("h_rel", s.iter().map(|r| r.h_rel).collect::<Vec<_>>())?;
        d.set_item("f_aux", s.iter().map(|r| r.f_aux).collect::<Vec<_>>())?;
        d.set_item("lyapunov", s.iter().map(|r| r.lyapunov).collect::<Vec<_>>())?;
        d.set_item("delta_m", s.iter().map(|r| r.delta_m).collect::<Vec<_>>())?;
        d.set_item("max_v", s.iter().map(|r| r.max_v).collect::<Vec<_>>())?;
        d.set_item("dt", s.iter().map(|r| r.dt).collect::<Vec<_>>())?;
        Ok(d)
    }

    /// Final truth fields keyed by edge name.
    fn final_truth<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        named_fields(py, &self.edge_names, &self.run.final_truth)
    }

    /// Final observer fields keyed by edge name.
    fn final_observer<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        named_fields(py, &self.edge_names, &self.run.final_observer)
    }

    fn __repr__(&self) -> String {
        format!(
            "TwinSummary(steps={}, initial_error_sq={:.6e}, final_error_sq={:.6e})",
            self.run.steps, self.run.initial_error_sq, self.run.final_error_sq,
        )
    }
}

fn named_fields<'py>(
    py: Python<'py>,
    names: &[String],
    state: &netmodel::FieldState,
) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new(py);
    for (name, field) in names.iter().zip(&state.edges) {
        let entry = PyDict::new(py);
        entry.set_item("rho", field.rho.clone())?;
        entry.set_item("v", field.v.clone())?;
        out.set_item(name, entry)?;
    }
    Ok(out)
}

/// Advance truth and observer to the scenario's final time and collect the
/// diagnostics series. `stepper` is `"moc"` or `"fv"`; `strict` turns audit
/// failures into errors.
#[pyfunction]
#[pyo3(signature = (scenario, stepper = "moc", strict = false))]
fn run_twin(py: Python<'_>, scenario: &Scenario, stepper: &str, strict: bool) -> PyResult<TwinSummary> {
    let options = RunOptions { stepper: Stepper::parse(stepper).map_err(to_py)?, strict };
    let inner = scenario.inner.clone();
    let run = py.detach(move || solver::run_twin(&inner, options)).map_err(to_py)?;
    let edge_names = scenario.inner.topology.edges.iter().map(|e| e.name.clone()).collect();
    Ok(TwinSummary { run, edge_names })
}

// ---------------------------------------------------------------------------
// Fixed-point solver
// ---------------------------------------------------------------------------

/// Per-leg record of a fixed-point iteration.
#[pyclass(frozen, skip_from_py_object, module = "pipeobs_py")]
#[derive(Clone)]
struct ContractionStats {
    #[pyo3(get)]
    iterations: usize,
    #[pyo3(get)]
    converged: bool,
    /// Sup-norm residual of the accepted fixed point.
    #[pyo3(get)]
    residual: f64,
    /// Largest successive-difference ratio, absent before the second step.
    #[pyo3(get)]
    q_max: Option<f64>,
    #[pyo3(get)]
    ratios: Vec<f64>,
    #[pyo3(get)]
    diffs: Vec<f64>,
    /// Sup-norm of the accepted solution's invariants.
    #[pyo3(get)]
    sup_norm: f64,
    /// How the starting data fell outside the budget (empty if certified).
    #[pyo3(get)]
    budget_warnings: Vec<String>,
}

#[pymethods]
impl ContractionStats {
    fn __repr__(&self) -> String {
        format!(
            "ContractionStats(iterations={}, q_max={:?}, residual={:.3e})",
            self.iterations, self.q_max, self.residual,
        )
    }
}

fn contraction_stats(history: &ContractionHistory, sup_norm: f64) -> ContractionStats {
    ContractionStats {
        iterations: history.iterations,
        converged: history.converged,
        residual: history.residual,
        q_max: history.q_max(),
        ratios: history.ratios.clone(),
        diffs: history.diffs.clone(),
        sup_norm,
        budget_warnings: history.budget_warnings.clone(),
    }
}

/// Outcome of the certified fixed-point solve on one horizon.
#[pyclass(frozen, module = "pipeobs_py")]
struct PicardSummary {
    /// Horizon actually solved.
    #[pyo3(get)]
    horizon: f64,
    /// Largest horizon the smallness budget admits.
    #[pyo3(get)]
    t_max: f64,
    /// Bound the initial and boundary data must respect.
    #[pyo3(get)]
    b_max: f64,
    /// Invariant bound of the certified ball.
    #[pyo3(get)]
    s_max: f64,
    #[pyo3(get)]
    truth: ContractionStats,
    /// Present when the scenario runs a live observer.
    #[pyo3(get)]
    observer: Option<ContractionStats>,
}

#[pymethods]
impl PicardSummary {
    fn __repr__(&self) -> String {
        format!(
            "PicardSummary(horizon={:.6e}, t_max={:.6e}, truth_iterations={})",
            self.horizon, self.t_max, self.truth.iterations,
        )
    }
}

/// Construct the solution by fixed-point iteration on a space-time lattice of
/// `n_x` by `n_t` points per edge, after deriving the smallness budget for
/// the invariant bound `s_max`. The horizon defaults to the budget's maximum.
#[pyfunction]
#[pyo3(signature = (scenario, s_max = 0.02, n_x = 100, n_t = 200, horizon = None))]
fn picard_solve(
    py: Python<'_>,
    scenario: &Scenario,
    s_max: f64,
    n_x: usize,
    n_t: usize,
    horizon: Option<f64>,
) -> PyResult<PicardSummary> {
    let inner = scenario.inner.clone();
    let solve = py
        .detach(move || picard::solve_twin(&inner, s_max, n_x, n_t, horizon))
        .map_err(to_py)?;
    let truth = contraction_stats(&solve.truth_history, solve.truth.sup_norm());
    let observer = solve
        .observer_history
        .as_ref()
        .zip(solve.observer.as_ref())
        .map(|(h, f)| contraction_stats(h, f.sup_norm()));
    Ok(PicardSummary {
        horizon: solve.horizon,
        t_max: solve.budget.t_max,
        b_max: solve.budget.b_max,
        s_max: solve.budget.s_max,
        truth,
        observer,
    })
}

// ---------------------------------------------------------------------------
// Module
// ---------------------------------------------------------------------------

/// Load a scenario from JSON text. Shorthand for `Scenario.from_json`.
#[pyfunction]
fn load_scenario(text: &str) -> PyResult<Scenario> {
    Scenario::from_json(text)
}

#[pymodule]
fn pipeobs_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Law>()?;
    m.add_class::<Scenario>()?;
    m.add_class::<Fit>()?;
    m.add_class::<TwinSummary>()?;
    m.add_class::<ContractionStats>()?;
    m.add_class::<PicardSummary>()?;
    m.add_function(wrap_pyfunction!(load_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(run_twin, m)?)?;
    m.add_function(wrap_pyfunction!(fit_decay, m)?)?;
    m.add_function(wrap_pyfunction!(picard_solve, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
