//! Time steppers and the twin-run driver.
//!
//! Two interchangeable schemes advance a network state:
//!
//! * a characteristic stepper working on the invariants `(s+, s-)`, which
//!   traces each family back along its frozen characteristic speed and, for
//!   observer modes whose nudging contains an exact `-(mu/2) s` part, absorbs
//!   that part into an integrating factor;
//! * a finite-volume stepper working on the conservative pair `(rho, m)`
//!   with a local Lax-Friedrichs flux and explicit sources.
//!
//! Both resolve nodes the same way: the incoming invariant of every incident
//! edge is fed to the junction coupling (or the boundary inversion), and the
//! solved node state supplies the outgoing invariants (characteristics) or
//! the boundary fluxes (finite volume). At a prescribed mass-flux boundary
//! the finite-volume mass flux uses the scheduled value exactly, and at
//! unprescribed nodes the node-local mass fluxes are shifted by their mean,
//! so the total mass on the network is conserved to rounding. A degree-1
//! node without a boundary condition behaves as a closed wall.
//!
//! [`run_twin`] advances a truth system and its observer in lockstep (the
//! observer sees the truth of the step's start time), recording the error
//! diagnostics after every step.

use crate::energy::{
    self, audit_assumptions, fit_decay, AuditReport, AuditTrace, AuxTracker, DecayFit, NormConstants,
};
use crate::junction::{boundary_windows, couple_node, invert_boundary_h, invert_boundary_m, BoundaryWindows};
use crate::netmodel::{
    BoundaryQuantity, EdgeEnd, EdgeField, FieldState, MeasurementMode, Scenario,
};
use crate::observer::{has_integrating_factor, nudging_physical, nudging_remainder, nudging_riemann};
use crate::riemann::{eigenvalues, friction_sigma, from_riemann, to_riemann};
use crate::{Error, Result};

/// Which scheme advances the fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Stepper {
    /// Characteristic tracing on the invariants.
    #[default]
    Moc,
    /// Finite volumes on the conservative variables.
    Fv,
}

impl Stepper {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "moc" => Ok(Stepper::Moc),
            "fv" => Ok(Stepper::Fv),
            other => Err(Error::Parse(format!("unknown stepper {other:?}, expected \"moc\" or \"fv\""))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stepper::Moc => "moc",
            Stepper::Fv => "fv",
        }
    }
}

/// Knobs of a twin run.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub stepper: Stepper,
    /// Treat violated model assumptions as errors instead of warnings.
    pub strict: bool,
}

/// Diagnostics recorded after each step (and once at the initial time with
/// `dt = 0`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    /// Squared L2 distance between truth and observer.
    pub l2_err_sq: f64,
    /// Relative energy of the observer against the truth.
    pub h_rel: f64,
    /// Auxiliary functional matching the measurement mode.
    pub f_aux: f64,
    /// `h_rel + delta * f_aux`.
    pub lyapunov: f64,
    /// Total mass difference, truth minus observer.
    pub delta_m: f64,
    /// Largest |v| over both systems.
    pub max_v: f64,
    /// Step size that produced this sample.
    pub dt: f64,
}

/// Everything a finished twin run reports.
#[derive(Debug, Clone)]
pub struct TwinRun {
    pub series: Vec<Sample>,
    /// Exponential fit of the error history, when one could be made.
    pub fit: Option<DecayFit>,
    pub audit: AuditReport,
    pub norm: NormConstants,
    /// Weight of the auxiliary functional in the Lyapunov candidate.
    pub delta: f64,
    /// The two candidate caps behind `delta` (norm cap, decrease cap).
    pub delta_candidates: (f64, f64),
    pub initial_error_sq: f64,
    pub final_error_sq: f64,
    pub mass_difference_initial: f64,
    pub mass_difference_final: f64,
    pub warnings: Vec<String>,
    pub final_truth: FieldState,
    pub final_observer: FieldState,
    pub steps: usize,
}

/// `(rho, v)` to the conservative pair `(rho, m)`.
pub fn to_conservative(rho: f64, v: f64) -> (f64, f64) {
    (rho, rho * v)
}

/// `(rho, m)` back to `(rho, v)`; the density must be positive.
pub fn from_conservative(rho: f64, m: f64) -> Result<(f64, f64)> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::Domain(format!("conservative state needs rho > 0, got {rho}")));
    }
    Ok((rho, m / rho))
}

/// Largest stable step for a cell-centered state: `cfl * min_e dx_e / max |lambda|`.
pub fn cfl_dt(scenario: &Scenario, state: &FieldState) -> Result<f64> {
    let mut dt = f64::INFINITY;
    for e in 0..scenario.topology.edges.len() {
        let f = &state.edges[e];
        let mut speed = 0.0f64;
        for j in 0..scenario.cells {
            if !(f.rho[j] > 0.0) {
                return Err(Error::Domain(format!("nonpositive density in cfl estimate: {}", f.rho[j])));
            }
            let (lp, lm) = eigenvalues(&scenario.law, f.rho[j], f.v[j]);
            speed = speed.max(lp.abs()).max(lm.abs());
        }
        dt = dt.min(scenario.dx(e) / speed);
    }
    Ok(scenario.cfl * dt)
}

// ---------------------------------------------------------------------------
// Internal state representations
// ---------------------------------------------------------------------------

/// Invariant fields on the characteristic grid
/// `[0, dx/2, 3dx/2, ..., len - dx/2, len]` (cells + 2 points per edge).
#[derive(Debug, Clone)]
struct CharEdge {
    sp: Vec<f64>,
    sm: Vec<f64>,
}

#[derive(Debug, Clone)]
struct CharState {
    time: f64,
    edges: Vec<CharEdge>,
}

/// Conservative fields at the cell centers.
#[derive(Debug, Clone)]
struct ConsEdge {
    rho: Vec<f64>,
    m: Vec<f64>,
}

#[derive(Debug, Clone)]
struct ConsState {
    time: f64,
    edges: Vec<ConsEdge>,
}

#[derive(Debug, Clone)]
enum SysState {
    Char(CharState),
    Cons(ConsState),
}

#[derive(Debug, Clone, Copy)]
struct EdgeGrid {
    dx: f64,
    len: f64,
    cells: usize,
}

impl EdgeGrid {
    fn of(scenario: &Scenario, edge: usize) -> Self {
        EdgeGrid { dx: scenario.dx(edge), len: scenario.topology.edges[edge].length, cells: scenario.cells }
    }

    /// Position of grid index `i` on the characteristic grid.
    fn position(&self, i: usize) -> f64 {
        if i == 0 {
            0.0
        } else if i == self.cells + 1 {
            self.len
        } else {
            (i as f64 - 0.5) * self.dx
        }
    }

    /// Linear interpolation on the characteristic grid; clamps to the edge.
    fn interp(&self, vals: &[f64], x: f64) -> f64 {
        let x = x.clamp(0.0, self.len);
        let half = 0.5 * self.dx;
        let n = vals.len();
        if x <= half {
            lerp(vals[0], vals[1], x / half)
        } else if x >= self.len - half {
            lerp(vals[n - 2], vals[n - 1], (x - (self.len - half)) / half)
        } else {
            let u = (x - half) / self.dx;
            let k = (u.floor() as usize).min(self.cells.saturating_sub(2));
            lerp(vals[1 + k], vals[2 + k], u - k as f64)
        }
    }
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

fn char_initial(scenario: &Scenario, observer: bool) -> Result<CharState> {
    let profiles = if observer { &scenario.observer_initial } else { &scenario.initial };
    let mut edges = Vec::with_capacity(scenario.topology.edges.len());
    for (e, p) in profiles.iter().enumerate() {
        let grid = EdgeGrid::of(scenario, e);
        let mut sp = Vec::with_capacity(grid.cells + 2);
        let mut sm = Vec::with_capacity(grid.cells + 2);
        for i in 0..grid.cells + 2 {
            let x = grid.position(i);
            let (s_plus, s_minus) = to_riemann(&scenario.law, p.rho.eval(x, grid.len), p.v.eval(x, grid.len))?;
            sp.push(s_plus);
            sm.push(s_minus);
        }
        edges.push(CharEdge { sp, sm });
    }
    Ok(CharState { time: 0.0, edges })
}

fn cons_initial(scenario: &Scenario, observer: bool) -> Result<ConsState> {
    let fields = scenario.initial_state(observer);
    let edges = fields
        .edges
        .iter()
        .map(|f| {
            for &r in &f.rho {
                if !(r > 0.0) {
                    return Err(Error::Domain(format!("initial density must be positive, got {r}")));
                }
            }
            Ok(ConsEdge {
                rho: f.rho.clone(),
                m: f.rho.iter().zip(&f.v).map(|(&r, &v)| r * v).collect(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(ConsState { time: 0.0, edges })
}

fn char_fields(scenario: &Scenario, state: &CharState) -> Result<FieldState> {
    let edges = state
        .edges
        .iter()
        .map(|e| {
            let mut rho = Vec::with_capacity(scenario.cells);
            let mut v = Vec::with_capacity(scenario.cells);
            for i in 1..=scenario.cells {
                let (r, u) = from_riemann(&scenario.law, e.sp[i], e.sm[i])?;
                rho.push(r);
                v.push(u);
            }
            Ok(EdgeField { rho, v })
        })
        .collect::<Result<_>>()?;
    Ok(FieldState { time: state.time, edges })
}

fn cons_fields(state: &ConsState) -> Result<FieldState> {
    let edges = state
        .edges
        .iter()
        .map(|e| {
            let mut v = Vec::with_capacity(e.rho.len());
            for (&r, &m) in e.rho.iter().zip(&e.m) {
                v.push(from_conservative(r, m)?.1);
            }
            Ok(EdgeField { rho: e.rho.clone(), v })
        })
        .collect::<Result<_>>()?;
    Ok(FieldState { time: state.time, edges })
}

// ---------------------------------------------------------------------------
// Node solves
// ---------------------------------------------------------------------------

/// Per-node warm starts reused across steps.
#[derive(Debug, Clone)]
struct NodeSolver {
    coupling: Vec<Option<Vec<f64>>>,
    boundary: Vec<Option<f64>>,
}

impl NodeSolver {
    fn new(n_nodes: usize) -> Self {
        NodeSolver { coupling: vec![None; n_nodes], boundary: vec![None; n_nodes] }
    }

    /// Resolve one node at time `t`: node-local incoming invariants in, the
    /// node-local outgoing invariants out (in incidence order). Boundary
    /// schedule evaluations are counted against the admissibility windows.
    fn solve(
        &mut self,
        scenario: &Scenario,
        windows: &BoundaryWindows,
        trace: &mut AuditTrace,
        node: usize,
        incoming: &[f64],
        t: f64,
    ) -> Result<Vec<f64>> {
        let law = &scenario.law;
        if let Some(bc) = scenario.boundary_for(node) {
            let (_, end) = scenario.topology.incidence[node][0];
            let value = bc.schedule.eval(t);
            trace.boundary_checked += 1;
            let out = match bc.quantity {
                BoundaryQuantity::MassFlux => {
                    if !windows.admits_m(value) {
                        trace.boundary_violations += 1;
                    }
                    // The schedule is edge-oriented; the inversion wants the
                    // node-local flux (positive into the edge).
                    let m_node = value * end.outward_sign();
                    invert_boundary_m(law, m_node, incoming[0], self.boundary[node])
                }
                BoundaryQuantity::Enthalpy => {
                    if !windows.admits_h(value) {
                        trace.boundary_violations += 1;
                    }
                    invert_boundary_h(law, value, incoming[0], self.boundary[node])
                }
            }
            .map_err(|e| Error::solver(t, format!("boundary node {}: {e}", scenario.topology.nodes[node])))?;
            self.boundary[node] = Some(out);
            Ok(vec![out])
        } else {
            let out = couple_node(law, incoming, self.coupling[node].as_deref())
                .map_err(|e| Error::solver(t, format!("node {}: {e}", scenario.topology.nodes[node])))?;
            self.coupling[node] = Some(out.clone());
            Ok(out)
        }
    }
}

// ---------------------------------------------------------------------------
// Characteristic stepper
// ---------------------------------------------------------------------------

/// Sources `(g+, g-)` of the two invariant families at position `x`, frozen
/// at the step's start time: friction plus, for the observer, the nudging
/// term (its remainder when the integrating factor absorbs the linear part).
fn char_sources(
    scenario: &Scenario,
    mode: MeasurementMode,
    mu: f64,
    factor: bool,
    grid: &EdgeGrid,
    obs: &CharEdge,
    truth: Option<&CharEdge>,
    x: f64,
) -> Result<(f64, f64)> {
    let sp = grid.interp(&obs.sp, x);
    let sm = grid.interp(&obs.sm, x);
    let sigma = friction_sigma(&scenario.law, scenario.gamma, sp, sm);
    let (np, nm) = match truth {
        Some(tr) if mode != MeasurementMode::None => {
            let r = (grid.interp(&tr.sp, x), grid.interp(&tr.sm, x));
            if factor {
                nudging_remainder(&scenario.law, mode, mu, r, (sp, sm))?
            } else {
                nudging_riemann(&scenario.law, mode, mu, r, (sp, sm))?
            }
        }
        _ => (0.0, 0.0),
    };
    Ok((-sigma + np, sigma + nm))
}

/// One characteristic step of size `dt` for the system `state`; `truth` is
/// the measured system at the same time (None when advancing the truth
/// itself, then `mode` must be `None`).
fn advance_char(
    scenario: &Scenario,
    windows: &BoundaryWindows,
    nodes: &mut NodeSolver,
    trace: &mut AuditTrace,
    mode: MeasurementMode,
    mu: f64,
    state: &CharState,
    truth: Option<&CharState>,
    dt: f64,
) -> Result<CharState> {
    let t = state.time;
    let n_edges = scenario.topology.edges.len();
    let cells = scenario.cells;
    let factor = has_integrating_factor(mode);
    let map_time = |e: Error| match e {
        Error::Solver { .. } => e,
        other => Error::solver(t, other.to_string()),
    };

    // Characteristic speeds at every grid point, with the subsonic guard.
    let mut lam_p = vec![vec![0.0; cells + 2]; n_edges];
    let mut lam_m = vec![vec![0.0; cells + 2]; n_edges];
    for e in 0..n_edges {
        let edge = &state.edges[e];
        for i in 0..cells + 2 {
            let (rho, v) = from_riemann(&scenario.law, edge.sp[i], edge.sm[i]).map_err(map_time)?;
            let (lp, lm) = eigenvalues(&scenario.law, rho, v);
            if lp <= 0.0 || lm >= 0.0 {
                return Err(Error::solver(
                    t,
                    format!(
                        "flow left the subsonic regime on edge {} (lambda+ = {lp:.6e}, lambda- = {lm:.6e})",
                        scenario.topology.edges[e].name
                    ),
                ));
            }
            lam_p[e][i] = lp;
            lam_m[e][i] = lm;
        }
    }

    let decay_fns = |tau: f64| -> (f64, f64) {
        if factor {
            ((-0.5 * mu * tau).exp(), (-0.25 * mu * tau).exp())
        } else {
            (1.0, 1.0)
        }
    };

    let mut new_edges = state.edges.clone();

    // 1) Trace the incoming invariant to each endpoint.
    for e in 0..n_edges {
        let grid = EdgeGrid::of(scenario, e);
        let old = &state.edges[e];
        let truth_edge = truth.map(|tr| &tr.edges[e]);

        let foot = -lam_m[e][0] * dt;
        if foot > grid.len {
            return Err(Error::solver(t, format!("cfl violation on edge {}", scenario.topology.edges[e].name)));
        }
        let (_, g_minus) =
            char_sources(scenario, mode, mu, factor, &grid, old, truth_edge, foot).map_err(map_time)?;
        let (decay, weight) = decay_fns(dt);
        new_edges[e].sm[0] = decay * grid.interp(&old.sm, foot) + dt * weight * g_minus;

        let foot = grid.len - lam_p[e][cells + 1] * dt;
        if foot < 0.0 {
            return Err(Error::solver(t, format!("cfl violation on edge {}", scenario.topology.edges[e].name)));
        }
        let (g_plus, _) =
            char_sources(scenario, mode, mu, factor, &grid, old, truth_edge, foot).map_err(map_time)?;
        new_edges[e].sp[cells + 1] = decay * grid.interp(&old.sp, foot) + dt * weight * g_plus;
    }

    // 2) Node solves at the new time fix the outgoing invariants.
    let t_new = t + dt;
    for node in 0..scenario.topology.nodes.len() {
        let inc = &scenario.topology.incidence[node];
        let incoming: Vec<f64> = inc
            .iter()
            .map(|&(e, end)| match end {
                EdgeEnd::Start => new_edges[e].sm[0],
                EdgeEnd::End => new_edges[e].sp[cells + 1],
            })
            .collect();
        let outgoing = nodes.solve(scenario, windows, trace, node, &incoming, t_new)?;
        for (&(e, end), &out) in inc.iter().zip(&outgoing) {
            match end {
                EdgeEnd::Start => new_edges[e].sp[0] = out,
                EdgeEnd::End => new_edges[e].sm[cells + 1] = out,
            }
        }
    }

    // 3) Interior updates; characteristics that cross a node within the step
    //    pick up the node value at the crossing time (linear in time).
    for e in 0..n_edges {
        let grid = EdgeGrid::of(scenario, e);
        let old = &state.edges[e];
        let truth_edge = truth.map(|tr| &tr.edges[e]);
        let node_sp_old = old.sp[0];
        let node_sp_new = new_edges[e].sp[0];
        let node_sm_old = old.sm[cells + 1];
        let node_sm_new = new_edges[e].sm[cells + 1];

        let mut sp_next = vec![0.0; cells];
        let mut sm_next = vec![0.0; cells];
        for j in 1..=cells {
            let x = grid.position(j);

            let foot = x - lam_p[e][j] * dt;
            sp_next[j - 1] = if foot >= 0.0 {
                let (g_plus, _) =
                    char_sources(scenario, mode, mu, factor, &grid, old, truth_edge, foot).map_err(map_time)?;
                let (decay, weight) = decay_fns(dt);
                decay * grid.interp(&old.sp, foot) + dt * weight * g_plus
            } else {
                let tau = x / lam_p[e][j];
                let node_val = lerp(node_sp_old, node_sp_new, 1.0 - tau / dt);
                let (g_plus, _) =
                    char_sources(scenario, mode, mu, factor, &grid, old, truth_edge, 0.0).map_err(map_time)?;
                let (decay, weight) = decay_fns(tau);
                decay * node_val + tau * weight * g_plus
            };

            let foot = x - lam_m[e][j] * dt;
            sm_next[j - 1] = if foot <= grid.len {
                let (_, g_minus) =
                    char_sources(scenario, mode, mu, factor, &grid, old, truth_edge, foot).map_err(map_time)?;
                let (decay, weight) = decay_fns(dt);
                decay * grid.interp(&old.sm, foot) + dt * weight * g_minus
            } else {
                let tau = (x - grid.len) / lam_m[e][j];
                let node_val = lerp(node_sm_old, node_sm_new, 1.0 - tau / dt);
                let (_, g_minus) =
                    char_sources(scenario, mode, mu, factor, &grid, old, truth_edge, grid.len).map_err(map_time)?;
                let (decay, weight) = decay_fns(tau);
                decay * node_val + tau * weight * g_minus
            };
        }
        new_edges[e].sp[1..=cells].copy_from_slice(&sp_next);
        new_edges[e].sm[1..=cells].copy_from_slice(&sm_next);
    }

    Ok(CharState { time: t_new, edges: new_edges })
}

fn max_speed_char(scenario: &Scenario, state: &CharState) -> Result<f64> {
    let mut dt = f64::INFINITY;
    for (e, edge) in state.edges.iter().enumerate() {
        let mut speed = 0.0f64;
        for i in 0..edge.sp.len() {
            let (rho, v) = from_riemann(&scenario.law, edge.sp[i], edge.sm[i])
                .map_err(|err| Error::solver(state.time, err.to_string()))?;
            let (lp, lm) = eigenvalues(&scenario.law, rho, v);
            speed = speed.max(lp.abs()).max(lm.abs());
        }
        dt = dt.min(scenario.dx(e) / speed);
    }
    Ok(scenario.cfl * dt)
}

// ---------------------------------------------------------------------------
// Finite-volume stepper
// ---------------------------------------------------------------------------

/// Resolved node state seen from one edge end, in the edge's own frame.
#[derive(Debug, Clone, Copy, Default)]
struct NodeFace {
    rho: f64,
    v_edge: f64,
    /// Edge-oriented mass flux actually used at the interface (scheduled
    /// value at a mass-flux boundary, mean-corrected at free nodes).
    m_edge: f64,
}

fn physical_flux(scenario: &Scenario, rho: f64, m: f64) -> (f64, f64) {
    (m, m * m / rho + scenario.law.pressure(rho))
}

fn rusanov(scenario: &Scenario, left: (f64, f64), right: (f64, f64)) -> (f64, f64) {
    let law = &scenario.law;
    let (rl, ml) = left;
    let (rr, mr) = right;
    let al = (ml / rl).abs() + law.sound_speed(rl);
    let ar = (mr / rr).abs() + law.sound_speed(rr);
    let a = al.max(ar);
    let fl = physical_flux(scenario, rl, ml);
    let fr = physical_flux(scenario, rr, mr);
    (0.5 * (fl.0 + fr.0) - 0.5 * a * (rr - rl), 0.5 * (fl.1 + fr.1) - 0.5 * a * (mr - ml))
}

/// One finite-volume step of size `dt`; same contract as [`advance_char`].
fn advance_cons(
    scenario: &Scenario,
    windows: &BoundaryWindows,
    nodes: &mut NodeSolver,
    trace: &mut AuditTrace,
    mode: MeasurementMode,
    mu: f64,
    state: &ConsState,
    truth: Option<&ConsState>,
    dt: f64,
) -> Result<ConsState> {
    let t = state.time;
    let law = &scenario.law;
    let cells = scenario.cells;
    let n_edges = scenario.topology.edges.len();

    let mut v = vec![vec![0.0; cells]; n_edges];
    for e in 0..n_edges {
        for j in 0..cells {
            let rho = state.edges[e].rho[j];
            if !(rho > 0.0) {
                return Err(Error::solver(
                    t,
                    format!("density became nonpositive on edge {}", scenario.topology.edges[e].name),
                ));
            }
            v[e][j] = state.edges[e].m[j] / rho;
        }
    }

    // Node states at the step's start time.
    let mut faces: Vec<[NodeFace; 2]> = vec![[NodeFace::default(); 2]; n_edges];
    for node in 0..scenario.topology.nodes.len() {
        let inc = &scenario.topology.incidence[node];
        let mut incoming = Vec::with_capacity(inc.len());
        for &(e, end) in inc {
            let (j, pick_plus) = match end {
                EdgeEnd::Start => (0, false),
                EdgeEnd::End => (cells - 1, true),
            };
            let (sp, sm) = to_riemann(law, state.edges[e].rho[j], v[e][j])
                .map_err(|err| Error::solver(t, err.to_string()))?;
            incoming.push(if pick_plus { sp } else { sm });
        }
        let outgoing = nodes.solve(scenario, windows, trace, node, &incoming, t)?;

        // Node-local mass fluxes (positive into the edge), then the mean
        // correction that makes a free node conserve mass exactly.
        let mut resolved = Vec::with_capacity(inc.len());
        for (k, &(e, end)) in inc.iter().enumerate() {
            let (sp, sm) = match end {
                EdgeEnd::Start => (outgoing[k], incoming[k]),
                EdgeEnd::End => (incoming[k], outgoing[k]),
            };
            let (rho_b, v_b) = from_riemann(law, sp, sm).map_err(|err| Error::solver(t, err.to_string()))?;
            let m_local = rho_b * v_b * end.outward_sign();
            resolved.push((e, end, rho_b, v_b, m_local));
        }
        let bc = scenario.boundary_for(node);
        if bc.is_none() {
            let share = resolved.iter().map(|r| r.4).sum::<f64>() / resolved.len() as f64;
            for r in &mut resolved {
                r.4 -= share;
            }
        }
        for (e, end, rho_b, v_b, m_local) in resolved {
            let m_edge = match bc.map(|b| b.quantity) {
                Some(BoundaryQuantity::MassFlux) => bc.unwrap().schedule.eval(t),
                _ => m_local * end.outward_sign(),
            };
            let side = match end {
                EdgeEnd::Start => 0,
                EdgeEnd::End => 1,
            };
            faces[e][side] = NodeFace { rho: rho_b, v_edge: v_b, m_edge };
        }
    }

    // Interface fluxes and the explicit update.
    let mut new_edges = Vec::with_capacity(n_edges);
    for e in 0..n_edges {
        let dx = scenario.dx(e);
        let old = &state.edges[e];
        let mut f_mass = vec![0.0; cells + 1];
        let mut f_mom = vec![0.0; cells + 1];
        for (i, face) in [(0, faces[e][0]), (cells, faces[e][1])] {
            f_mass[i] = face.m_edge;
            f_mom[i] = face.rho * face.v_edge * face.v_edge + law.pressure(face.rho);
        }
        for i in 1..cells {
            let (fm, fp) = rusanov(scenario, (old.rho[i - 1], old.m[i - 1]), (old.rho[i], old.m[i]));
            f_mass[i] = fm;
            f_mom[i] = fp;
        }

        let mut rho_new = vec![0.0; cells];
        let mut m_new = vec![0.0; cells];
        for j in 0..cells {
            let (rho, m) = (old.rho[j], old.m[j]);
            let friction = -scenario.gamma * m.abs() * m / rho;
            let (l_rho, l_v) = match truth {
                Some(tr) if mode != MeasurementMode::None => {
                    let truth_v = tr.edges[e].m[j] / tr.edges[e].rho[j];
                    let n = nudging_physical(law, mode, mu, (tr.edges[e].rho[j], truth_v), (rho, v[e][j]))
                        .map_err(|err| Error::solver(t, err.to_string()))?;
                    (n.l_rho, n.l_v)
                }
                _ => (0.0, 0.0),
            };
            rho_new[j] = rho - dt / dx * (f_mass[j + 1] - f_mass[j]) + dt * l_rho;
            m_new[j] = m - dt / dx * (f_mom[j + 1] - f_mom[j]) + dt * (friction + rho * l_v + v[e][j] * l_rho);
            if !(rho_new[j] > 0.0) {
                return Err(Error::solver(
                    t,
                    format!("density became nonpositive on edge {}", scenario.topology.edges[e].name),
                ));
            }
        }
        new_edges.push(ConsEdge { rho: rho_new, m: m_new });
    }

    Ok(ConsState { time: t + dt, edges: new_edges })
}

fn max_speed_cons(scenario: &Scenario, state: &ConsState) -> Result<f64> {
    let mut dt = f64::INFINITY;
    for (e, edge) in state.edges.iter().enumerate() {
        let mut speed = 0.0f64;
        for (&rho, &m) in edge.rho.iter().zip(&edge.m) {
            let (_, v) = from_conservative(rho, m)?;
            let (lp, lm) = eigenvalues(&scenario.law, rho, v);
            speed = speed.max(lp.abs()).max(lm.abs());
        }
        dt = dt.min(scenario.dx(e) / speed);
    }
    Ok(scenario.cfl * dt)
}

// ---------------------------------------------------------------------------
// Twin driver
// ---------------------------------------------------------------------------

/// A truth system and its observer advanced in lockstep.
#[derive(Debug)]
pub struct TwinSim {
    scenario: Scenario,
    options: RunOptions,
    truth: SysState,
    obs: SysState,
    nodes_truth: NodeSolver,
    nodes_obs: NodeSolver,
    tracker: AuxTracker,
    trace: AuditTrace,
    windows: BoundaryWindows,
    norm: NormConstants,
    delta: f64,
    delta_candidates: (f64, f64),
    series: Vec<Sample>,
    warnings: Vec<String>,
    time: f64,
    steps: usize,
}

/// Step cap guarding against runaway loops from degenerate configurations.
const MAX_STEPS: usize = 20_000_000;

impl TwinSim {
    pub fn new(scenario: &Scenario, options: RunOptions) -> Result<Self> {
        let norm = energy::norm_equiv_constants(&scenario.bounds)?;
        let (delta, delta_candidates) = energy::decay_delta(
            &norm,
            &scenario.bounds,
            scenario.mu,
            scenario.gamma,
            scenario.topology.max_length(),
        );

        // Invariant ball implied by the band; boundary data is audited
        // against the admissibility windows of this ball.
        let law = &scenario.law;
        let s_cap = law
            .rho_coordinate(scenario.band.rho_lo)
            .abs()
            .max(law.rho_coordinate(scenario.band.rho_hi).abs())
            + scenario.band.v_bar / law.sound_ref();
        let windows = boundary_windows(law, s_cap)?;

        let (truth, obs) = match options.stepper {
            Stepper::Moc => (
                SysState::Char(char_initial(scenario, false)?),
                SysState::Char(char_initial(scenario, true)?),
            ),
            Stepper::Fv => (
                SysState::Cons(cons_initial(scenario, false)?),
                SysState::Cons(cons_initial(scenario, true)?),
            ),
        };

        let mut warnings = compatibility_warnings(scenario);
        if scenario.mode == MeasurementMode::None && scenario.mu != 0.0 {
            warnings.push("observer gain mu is ignored in measurement mode \"none\"".into());
        }
        if options.strict && !warnings.is_empty() {
            return Err(Error::StrictAudit(warnings.join("; ")));
        }

        let n_nodes = scenario.topology.nodes.len();
        let mut sim = TwinSim {
            scenario: scenario.clone(),
            options,
            truth,
            obs,
            nodes_truth: NodeSolver::new(n_nodes),
            nodes_obs: NodeSolver::new(n_nodes),
            tracker: AuxTracker::Inactive,
            trace: AuditTrace::default(),
            windows,
            norm,
            delta,
            delta_candidates,
            series: Vec::new(),
            warnings,
            time: 0.0,
            steps: 0,
        };
        let truth0 = sim.truth_state()?;
        let obs0 = sim.observer_state()?;
        sim.tracker = AuxTracker::new(scenario, &truth0, &obs0)?;
        sim.trace.observe_fields(&truth0, &obs0);
        sim.push_sample(0.0)?;
        sim.check_strict()?;
        Ok(sim)
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn series(&self) -> &[Sample] {
        &self.series
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Cell-centered truth fields at the current time.
    pub fn truth_state(&self) -> Result<FieldState> {
        match &self.truth {
            SysState::Char(c) => char_fields(&self.scenario, c),
            SysState::Cons(c) => cons_fields(c),
        }
    }

    /// Cell-centered observer fields at the current time.
    pub fn observer_state(&self) -> Result<FieldState> {
        match &self.obs {
            SysState::Char(c) => char_fields(&self.scenario, c),
            SysState::Cons(c) => cons_fields(c),
        }
    }

    fn stable_dt(&self) -> Result<f64> {
        let a = match &self.truth {
            SysState::Char(c) => max_speed_char(&self.scenario, c)?,
            SysState::Cons(c) => max_speed_cons(&self.scenario, c)?,
        };
        let b = match &self.obs {
            SysState::Char(c) => max_speed_char(&self.scenario, c)?,
            SysState::Cons(c) => max_speed_cons(&self.scenario, c)?,
        };
        Ok(a.min(b))
    }

    /// Advance both systems by one step; returns the step size taken.
    pub fn step(&mut self) -> Result<f64> {
        let remaining = self.scenario.t_end - self.time;
        if remaining <= 0.0 {
            return Err(Error::Diagnostic("the run already reached its final time".into()));
        }
        if self.steps >= MAX_STEPS {
            return Err(Error::solver(self.time, format!("step limit of {MAX_STEPS} exceeded")));
        }
        let dt = self.stable_dt()?.min(remaining);
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::solver(self.time, format!("degenerate step size {dt}")));
        }

        let truth_old = self.truth_state()?;
        let obs_old = self.observer_state()?;

        // Observer first (it reads the truth at the step's start), then truth.
        let new_obs = match (&self.truth, &self.obs) {
            (SysState::Char(tr), SysState::Char(ob)) => SysState::Char(advance_char(
                &self.scenario,
                &self.windows,
                &mut self.nodes_obs,
                &mut self.trace,
                self.scenario.mode,
                self.scenario.mu,
                ob,
                Some(tr),
                dt,
            )?),
            (SysState::Cons(tr), SysState::Cons(ob)) => SysState::Cons(advance_cons(
                &self.scenario,
                &self.windows,
                &mut self.nodes_obs,
                &mut self.trace,
                self.scenario.mode,
                self.scenario.mu,
                ob,
                Some(tr),
                dt,
            )?),
            _ => unreachable!("twin systems always share a stepper"),
        };
        let new_truth = match &self.truth {
            SysState::Char(tr) => SysState::Char(advance_char(
                &self.scenario,
                &self.windows,
                &mut self.nodes_truth,
                &mut self.trace,
                MeasurementMode::None,
                0.0,
                tr,
                None,
                dt,
            )?),
            SysState::Cons(tr) => SysState::Cons(advance_cons(
                &self.scenario,
                &self.windows,
                &mut self.nodes_truth,
                &mut self.trace,
                MeasurementMode::None,
                0.0,
                tr,
                None,
                dt,
            )?),
        };

        self.tracker.advance(&self.scenario, &truth_old, &obs_old, dt);
        self.truth = new_truth;
        self.obs = new_obs;
        self.time += dt;
        self.steps += 1;

        let truth_new = self.truth_state()?;
        let obs_new = self.observer_state()?;
        self.trace.observe_fields(&truth_new, &obs_new);
        self.trace.observe_rates(&truth_old, &truth_new, dt);
        self.trace.steps += 1;

        self.push_sample(dt)?;
        self.check_strict()?;
        Ok(dt)
    }

    fn push_sample(&mut self, dt: f64) -> Result<()> {
        let truth = self.truth_state()?;
        let obs = self.observer_state()?;
        let l2_err_sq = energy::l2_error_sq(&self.scenario, &truth, &obs);
        let h_rel = energy::relative_energy(&self.scenario, &obs, &truth)
            .map_err(|e| Error::solver(self.time, e.to_string()))?;
        let f_aux = self.tracker.value(&self.scenario, &truth, &obs);
        self.series.push(Sample {
            t: self.time,
            l2_err_sq,
            h_rel,
            f_aux,
            lyapunov: h_rel + self.delta * f_aux,
            delta_m: energy::mass_difference(&self.scenario, &obs, &truth),
            max_v: energy::max_abs_velocity(&truth, &obs),
            dt,
        });
        Ok(())
    }

    fn check_strict(&self) -> Result<()> {
        if !self.options.strict {
            return Ok(());
        }
        let report = audit_assumptions(&self.trace, &self.scenario.bounds);
        if let Some(bad) = report.checks.iter().take(5).find(|c| !c.satisfied) {
            return Err(Error::StrictAudit(format!(
                "assumption {} violated at t = {:.6}: {}",
                bad.name, self.time, bad.detail
            )));
        }
        Ok(())
    }

    /// Run to the scenario's final time and assemble the report.
    pub fn run(mut self) -> Result<TwinRun> {
        let t_end = self.scenario.t_end;
        let eps = 1e-12 * t_end.max(1.0);
        while t_end - self.time > eps {
            self.step()?;
        }

        let mut warnings = self.warnings.clone();
        let errs: Vec<(f64, f64)> = self.series.iter().map(|s| (s.t, s.l2_err_sq.sqrt())).collect();
        let fit = match fit_decay(&errs, None) {
            Ok(f) => Some(f),
            Err(e) => {
                warnings.push(format!("no decay fit: {e}"));
                None
            }
        };
        let audit = audit_assumptions(&self.trace, &self.scenario.bounds);
        let first = self.series.first().expect("series holds the initial sample");
        let last = *self.series.last().expect("series holds the initial sample");
        Ok(TwinRun {
            fit,
            audit,
            norm: self.norm,
            delta: self.delta,
            delta_candidates: self.delta_candidates,
            initial_error_sq: first.l2_err_sq,
            final_error_sq: last.l2_err_sq,
            mass_difference_initial: first.delta_m,
            mass_difference_final: last.delta_m,
            warnings,
            final_truth: self.truth_state()?,
            final_observer: self.observer_state()?,
            steps: self.steps,
            series: self.series,
        })
    }
}

/// Advance truth and observer to the scenario's final time.
pub fn run_twin(scenario: &Scenario, options: RunOptions) -> Result<TwinRun> {
    TwinSim::new(scenario, options)?.run()
}

/// Initial-data consistency checks: boundary schedules and junction
/// continuity at t = 0, for both systems. Mismatches are reported (tolerance
/// 1e-6); strict runs refuse them.
fn compatibility_warnings(scenario: &Scenario) -> Vec<String> {
    const TOL: f64 = 1e-6;
    let mut warnings = Vec::new();
    let law = &scenario.law;
    let topo = &scenario.topology;
    for (label, profiles) in [("truth", &scenario.initial), ("observer", &scenario.observer_initial)] {
        let at_end = |e: usize, end: EdgeEnd| -> (f64, f64) {
            let len = topo.edges[e].length;
            let x = match end {
                EdgeEnd::Start => 0.0,
                EdgeEnd::End => len,
            };
            (profiles[e].rho.eval(x, len), profiles[e].v.eval(x, len))
        };
        for bc in &scenario.boundary {
            let (e, end) = topo.incidence[bc.node][0];
            let (rho, v) = at_end(e, end);
            let datum = bc.schedule.eval(0.0);
            match bc.quantity {
                BoundaryQuantity::MassFlux => {
                    let m = rho * v;
                    if (m - datum).abs() > TOL {
                        warnings.push(format!(
                            "{label} initial mass flux at node {} is {m:.6e}, schedule starts at {datum:.6e}",
                            topo.nodes[bc.node]
                        ));
                    }
                }
                BoundaryQuantity::Enthalpy => {
                    let h = crate::riemann::enthalpy(law, rho, v);
                    if (h - datum).abs() > TOL {
                        warnings.push(format!(
                            "{label} initial enthalpy at node {} is {h:.6e}, schedule starts at {datum:.6e}",
                            topo.nodes[bc.node]
                        ));
                    }
                }
            }
        }
        for node in 0..topo.nodes.len() {
            if scenario.boundary_for(node).is_some() || topo.incidence[node].len() < 2 {
                continue;
            }
            let states: Vec<(f64, f64, EdgeEnd)> = topo.incidence[node]
                .iter()
                .map(|&(e, end)| {
                    let (rho, v) = at_end(e, end);
                    (rho, v, end)
                })
                .collect();
            let hs: Vec<f64> = states.iter().map(|&(rho, v, _)| crate::riemann::enthalpy(law, rho, v)).collect();
            let spread = hs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - hs.iter().cloned().fold(f64::INFINITY, f64::min);
            if spread > TOL {
                warnings.push(format!(
                    "{label} initial enthalpy jumps by {spread:.6e} across node {}",
                    topo.nodes[node]
                ));
            }
            // Mass flux into the node: +m at an edge end, -m at an edge start.
            let net: f64 = states.iter().map(|&(rho, v, end)| -rho * v * end.outward_sign()).sum();
            if net.abs() > TOL {
                warnings.push(format!(
                    "{label} initial mass flux imbalance of {net:.6e} at node {}",
                    topo.nodes[node]
                ));
            }
        }
    }
    warnings
}
