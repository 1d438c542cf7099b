//! Fixed-point companion to the steppers.
//!
//! The invariant form of the system can be written as an integral equation
//! along characteristics: the value at `(t, x)` equals the value where the
//! characteristic entered the domain (initial data, boundary, or junction),
//! damped by the observer kernel, plus a kernel-weighted path integral of
//! the sources. Iterating that map from the initial data is a contraction
//! on a short horizon when the data is small enough, and the module both
//! runs the iteration and measures the contraction it achieves.
//!
//! [`SmallnessBudget`] packages the bounds that certify the contraction:
//! invariant and data bounds, Lipschitz constants, and the admissible
//! horizon. [`iterate_to_fixed_point`] runs the map to a fixed point and
//! records per-iteration ratios; [`semi_global_continuation`] chains window
//! solves to cover longer horizons. The observer map follows the
//! velocity-measurement form; with gain zero it reduces to the plain system.

use crate::junction::{boundary_windows, couple_node, estimate_junction_gain, invert_boundary_h, invert_boundary_m};
use crate::netmodel::{BoundaryQuantity, EdgeEnd, EdgeProfiles, MeasurementMode, Profile, Scenario, Schedule};
use crate::observer::nudging_remainder;
use crate::riemann::{eigen_bounds, eigenvalues, friction_sigma, from_riemann, sigma_bounds, to_riemann};
use crate::{Error, Result};

/// Convergence tolerance of the fixed-point iteration (in the lattice norm).
pub const PICARD_TOL: f64 = 1e-10;

/// Default iteration cap.
pub const MAX_PICARD_ITERS: usize = 200;

/// Iterates whose sup-norm exceeds this multiple of the certified invariant
/// bound count as having left the certified ball (divergence).
const ESCAPE_FACTOR: f64 = 10.0;

/// Invariant family selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Plus,
    Minus,
}

// ---------------------------------------------------------------------------
// Smallness budget
// ---------------------------------------------------------------------------

/// The individual horizon caps whose minimum is the admissible horizon.
#[derive(Debug, Clone, Copy)]
pub struct HorizonCandidates {
    /// From the damping condition on the observer kernel.
    pub damping: f64,
    /// Keeps accumulated friction within the invariant bound.
    pub source: f64,
    /// Keeps the friction Lipschitz contribution contractive.
    pub friction: f64,
    /// Characteristics may not cross a full edge.
    pub crossing: f64,
    /// Keeps the solution Lipschitz constant self-consistent.
    pub lipschitz: f64,
}

/// Bounds under which the fixed-point iteration is certified to contract.
#[derive(Debug, Clone)]
pub struct SmallnessBudget {
    /// Invariant bound of the certified ball.
    pub s_max: f64,
    /// Bound on initial and boundary data.
    pub b_max: f64,
    /// Lipschitz constant measured from the scenario's data.
    pub l_data: f64,
    /// Lipschitz bound the iterates must respect.
    pub l_solution: f64,
    /// Admissible horizon (minimum of all candidates).
    pub t_max: f64,
    pub mu: f64,
    /// Slowest characteristic speed on the ball.
    pub lambda_lo: f64,
    /// Fastest characteristic speed on the ball.
    pub lambda_hi: f64,
    /// Lipschitz constant of the speeds in the invariants.
    pub l_lambda: f64,
    /// Largest friction source on the ball.
    pub sigma_max: f64,
    /// Lipschitz constant of the friction source.
    pub l_sigma: f64,
    /// Worst junction amplification over interior nodes (0 when none).
    pub junction_gain: f64,
    pub candidates: HorizonCandidates,
}

impl SmallnessBudget {
    /// Derive the budget for a claimed invariant bound `s_max`: speed and
    /// friction bounds on the ball, the junction gain, the data bounds, and
    /// the horizon candidates.
    pub fn derive(scenario: &Scenario, s_max: f64) -> Result<Self> {
        if !(s_max > 0.0) || !s_max.is_finite() {
            return Err(Error::Budget(format!("invariant bound must be positive, got {s_max}")));
        }
        let law = &scenario.law;
        let eig = eigen_bounds(law, s_max)?;
        let (sigma_max, l_sigma) = sigma_bounds(law, scenario.gamma, s_max);

        let mut junction_gain = 0.0f64;
        for node in scenario.topology.interior_nodes() {
            let degree = scenario.topology.incidence[node].len();
            junction_gain = junction_gain.max(estimate_junction_gain(law, degree, s_max)?);
        }

        let b_max = 0.25 * s_max / (4.0 + junction_gain);
        let l_data = data_lipschitz(scenario);
        let mu = scenario.mu;
        let l_solution = 2.0
            * (108.0 * mu * s_max / eig.lambda_lo)
                .max(36.0 * sigma_max / eig.lambda_lo)
                .max(l_data);

        let damping = if mu > 0.0 {
            let rhs = (1.0 / 12.0)
                * 1.0f64.min((4.0 / 9.0) / (4.0 + junction_gain) * eig.lambda_lo / eig.lambda_hi);
            0.999 * (2.0 / mu) * (-(1.0 - rhs).ln())
        } else {
            f64::INFINITY
        };
        let source = if sigma_max > 0.0 {
            0.25 * s_max / ((4.0 + junction_gain) * sigma_max)
        } else {
            f64::INFINITY
        };
        let friction = if l_sigma > 0.0 { 1.0 / (72.0 * l_sigma) } else { f64::INFINITY };
        let crossing = 0.999 * scenario.topology.min_length() / eig.lambda_hi;
        let lipschitz = if l_solution * eig.lipschitz > 0.0 {
            1.5f64.ln() / (2.0 * l_solution * eig.lipschitz)
        } else {
            f64::INFINITY
        };
        let candidates = HorizonCandidates { damping, source, friction, crossing, lipschitz };
        let t_max = damping.min(source).min(friction).min(crossing).min(lipschitz);

        Ok(SmallnessBudget {
            s_max,
            b_max,
            l_data,
            l_solution,
            t_max,
            mu,
            lambda_lo: eig.lambda_lo,
            lambda_hi: eig.lambda_hi,
            l_lambda: eig.lipschitz,
            sigma_max,
            l_sigma,
            junction_gain,
            candidates,
        })
    }

    /// Check a requested horizon against every condition, naming the first
    /// violated one with its margin.
    pub fn validate_horizon(&self, t: f64) -> Result<()> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::Budget(format!("horizon must be positive and finite, got {t}")));
        }
        let c = &self.candidates;
        let checks = [
            ("characteristic crossing", c.crossing),
            ("observer damping", c.damping),
            ("friction accumulation", c.source),
            ("friction contraction", c.friction),
            ("solution Lipschitz consistency", c.lipschitz),
        ];
        for (name, cap) in checks {
            if t > cap {
                return Err(Error::Budget(format!(
                    "horizon {t:.6e} violates the {name} condition (cap {cap:.6e})"
                )));
            }
        }
        Ok(())
    }

    /// Ways a concrete data field falls outside this budget; empty when the
    /// contraction certificate applies.
    pub fn data_violations(&self, field: &LatticeField) -> Vec<String> {
        let mut out = Vec::new();
        let (lip, sup) = measure_lipschitz(field);
        if sup > self.b_max * (1.0 + 1e-12) {
            out.push(format!("data bound: sup |S| = {sup:.3e} exceeds B_max = {:.3e}", self.b_max));
        }
        if lip > self.l_solution * (1.0 + 1e-12) {
            out.push(format!(
                "data Lipschitz: {lip:.3e} exceeds the solution bound {:.3e}",
                self.l_solution
            ));
        }
        out
    }
}

/// Largest slope (in x) of the initial invariants plus the largest slope
/// (in t) of the boundary schedules, measured on a fine sampling.
fn data_lipschitz(scenario: &Scenario) -> f64 {
    let mut l = 0.0f64;
    let n = 512;
    for profiles in [&scenario.initial, &scenario.observer_initial] {
        for (e, p) in profiles.iter().enumerate() {
            let len = scenario.topology.edges[e].length;
            let dx = len / n as f64;
            let mut prev: Option<(f64, f64)> = None;
            for i in 0..=n {
                let x = i as f64 * dx;
                let pair = to_riemann(&scenario.law, p.rho.eval(x, len), p.v.eval(x, len))
                    .unwrap_or((f64::NAN, f64::NAN));
                if let Some((sp, sm)) = prev {
                    l = l.max((pair.0 - sp).abs() / dx).max((pair.1 - sm).abs() / dx);
                }
                prev = Some(pair);
            }
        }
    }
    for bc in &scenario.boundary {
        if let Schedule::PiecewiseLinear(points) = &bc.schedule {
            for w in points.windows(2) {
                let dt = w[1].0 - w[0].0;
                if dt > 0.0 {
                    l = l.max((w[1].1 - w[0].1).abs() / dt);
                }
            }
        }
    }
    l
}

// ---------------------------------------------------------------------------
// Space-time lattice
// ---------------------------------------------------------------------------

/// Dense space-time history of both invariant families on every edge:
/// `n_x + 1` equidistant points per edge times `n_t + 1` time slices,
/// linearly interpolated in both axes.
#[derive(Debug, Clone)]
pub struct LatticeField {
    lengths: Vec<f64>,
    n_x: usize,
    n_t: usize,
    t_max: f64,
    /// `values[edge][family][time][space]`.
    values: Vec<[Vec<Vec<f64>>; 2]>,
}

impl LatticeField {
    /// Sample the scenario's initial profiles and extend them constant in
    /// time (the iteration's starting field).
    pub fn from_profiles(scenario: &Scenario, observer: bool, n_x: usize, n_t: usize, t_max: f64) -> Result<Self> {
        if n_x < 2 || n_t < 1 {
            return Err(Error::Validation("lattice needs at least 2 space and 1 time interval".into()));
        }
        if !(t_max > 0.0) || !t_max.is_finite() {
            return Err(Error::Validation(format!("lattice horizon must be positive, got {t_max}")));
        }
        let profiles = if observer { &scenario.observer_initial } else { &scenario.initial };
        let mut values = Vec::with_capacity(scenario.topology.edges.len());
        let mut lengths = Vec::with_capacity(scenario.topology.edges.len());
        for (e, p) in profiles.iter().enumerate() {
            let len = scenario.topology.edges[e].length;
            let mut plus = vec![0.0; n_x + 1];
            let mut minus = vec![0.0; n_x + 1];
            for i in 0..=n_x {
                let x = i as f64 * len / n_x as f64;
                let (sp, sm) = to_riemann(&scenario.law, p.rho.eval(x, len), p.v.eval(x, len))?;
                plus[i] = sp;
                minus[i] = sm;
            }
            values.push([vec![plus; n_t + 1], vec![minus; n_t + 1]]);
            lengths.push(len);
        }
        Ok(LatticeField { lengths, n_x, n_t, t_max, values })
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn edge_length(&self, edge: usize) -> f64 {
        self.lengths[edge]
    }

    fn family(&self, edge: usize, family: Family) -> &Vec<Vec<f64>> {
        match family {
            Family::Plus => &self.values[edge][0],
            Family::Minus => &self.values[edge][1],
        }
    }

    /// Both invariant rows of one time slice.
    pub fn slice(&self, edge: usize, k: usize) -> (&[f64], &[f64]) {
        (&self.values[edge][0][k], &self.values[edge][1][k])
    }

    /// Bilinear interpolation; clamps to the lattice extent.
    pub fn value(&self, edge: usize, family: Family, t: f64, x: f64) -> f64 {
        let grid = self.family(edge, family);
        let (k, ft) = self.time_cell(t);
        let (i, fx) = self.space_cell(edge, x);
        let lo = grid[k][i] * (1.0 - fx) + grid[k][i + 1] * fx;
        let hi = grid[k + 1][i] * (1.0 - fx) + grid[k + 1][i + 1] * fx;
        lo * (1.0 - ft) + hi * ft
    }

    /// Both families at one space-time point.
    pub fn pair(&self, edge: usize, t: f64, x: f64) -> (f64, f64) {
        (self.value(edge, Family::Plus, t, x), self.value(edge, Family::Minus, t, x))
    }

    fn time_cell(&self, t: f64) -> (usize, f64) {
        let dt = self.t_max / self.n_t as f64;
        let u = (t / dt).clamp(0.0, self.n_t as f64);
        let k = (u.floor() as usize).min(self.n_t - 1);
        (k, u - k as f64)
    }

    fn space_cell(&self, edge: usize, x: f64) -> (usize, f64) {
        let dx = self.lengths[edge] / self.n_x as f64;
        let u = (x / dx).clamp(0.0, self.n_x as f64);
        let i = (u.floor() as usize).min(self.n_x - 1);
        (i, u - i as f64)
    }

    /// Largest |S| over the whole lattice.
    pub fn sup_norm(&self) -> f64 {
        self.values
            .iter()
            .flat_map(|fams| fams.iter())
            .flat_map(|grid| grid.iter())
            .flat_map(|row| row.iter())
            .fold(0.0f64, |acc, &v| acc.max(v.abs()))
    }

    /// Iteration norm of the difference: max over the lattice of
    /// |dS+| + |dS-|, max over edges.
    pub fn diff_norm(&self, other: &LatticeField) -> f64 {
        let mut norm = 0.0f64;
        for e in 0..self.values.len() {
            for k in 0..=self.n_t {
                for i in 0..=self.n_x {
                    let dp = self.values[e][0][k][i] - other.values[e][0][k][i];
                    let dm = self.values[e][1][k][i] - other.values[e][1][k][i];
                    norm = norm.max(dp.abs() + dm.abs());
                }
            }
        }
        norm
    }
}

/// Largest finite-difference slope in x over the lattice, and the sup-norm.
pub fn measure_lipschitz(field: &LatticeField) -> (f64, f64) {
    let mut l = 0.0f64;
    for e in 0..field.values.len() {
        let dx = field.lengths[e] / field.n_x as f64;
        for grid in &field.values[e] {
            for row in grid {
                for w in row.windows(2) {
                    l = l.max((w[1] - w[0]).abs() / dx);
                }
            }
        }
    }
    (l, field.sup_norm())
}

// ---------------------------------------------------------------------------
// Characteristic tracing
// ---------------------------------------------------------------------------

/// Result of tracing one characteristic backward from `(t, x)`.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Time where the backward path ended (0, or the node hitting time).
    pub foot_time: f64,
    pub foot_position: f64,
    /// Edge end whose node stopped the path; None when the initial time did.
    pub hit: Option<EdgeEnd>,
    /// `(time, position)` along the path, from the foot to `(t, x)`.
    pub samples: Vec<(f64, f64)>,
}

/// Backward explicit-Euler integration of `dx/ds = lambda(field(s, x))`,
/// stopping at s = 0 or at the edge end the family leaves through.
pub fn trace_characteristic(
    scenario: &Scenario,
    field: &LatticeField,
    edge: usize,
    family: Family,
    x: f64,
    t: f64,
    substep: f64,
) -> Result<Trace> {
    if !(substep > 0.0) {
        return Err(Error::Validation(format!("trace substep must be positive, got {substep}")));
    }
    let len = field.edge_length(edge);
    let mut samples = vec![(t, x)];
    let mut s = t;
    let mut pos = x;

    // The outgoing invariant at a node starts exactly on it.
    let immediate = match family {
        Family::Plus => x <= 0.0,
        Family::Minus => x >= len,
    };
    if immediate && t > 0.0 {
        let end = if matches!(family, Family::Plus) { EdgeEnd::Start } else { EdgeEnd::End };
        return Ok(Trace { foot_time: t, foot_position: pos, hit: Some(end), samples });
    }

    while s > 0.0 {
        let (sp, sm) = field.pair(edge, s, pos);
        let (rho, v) = from_riemann(&scenario.law, sp, sm)?;
        let (lp, lm) = eigenvalues(&scenario.law, rho, v);
        let lambda = match family {
            Family::Plus => lp,
            Family::Minus => lm,
        };
        let h = substep.min(s);
        let next = pos - lambda * h;
        if next <= 0.0 && pos > 0.0 {
            if matches!(family, Family::Minus) {
                return Err(Error::Budget(format!(
                    "minus-family characteristic reversed into the left end of edge {}",
                    scenario.topology.edges[edge].name
                )));
            }
            let theta = pos / (pos - next);
            let s_hit = s - theta * h;
            samples.push((s_hit, 0.0));
            samples.reverse();
            return Ok(Trace { foot_time: s_hit, foot_position: 0.0, hit: Some(EdgeEnd::Start), samples });
        }
        if next >= len && pos < len {
            if matches!(family, Family::Plus) {
                return Err(Error::Budget(format!(
                    "plus-family characteristic reversed into the right end of edge {}",
                    scenario.topology.edges[edge].name
                )));
            }
            let theta = (len - pos) / (next - pos);
            let s_hit = s - theta * h;
            samples.push((s_hit, len));
            samples.reverse();
            return Ok(Trace { foot_time: s_hit, foot_position: len, hit: Some(EdgeEnd::End), samples });
        }
        s -= h;
        pos = next.clamp(0.0, len);
        samples.push((s, pos));
    }
    samples.reverse();
    Ok(Trace { foot_time: 0.0, foot_position: pos, hit: None, samples })
}

// ---------------------------------------------------------------------------
// The fixed-point map
// ---------------------------------------------------------------------------

struct PhiCtx<'a> {
    scenario: &'a Scenario,
    prev: &'a LatticeField,
    truth: Option<&'a LatticeField>,
    mu: f64,
    /// Offset added to lattice times when evaluating boundary schedules
    /// (continuation windows start at a later absolute time).
    t_offset: f64,
    substep: f64,
}

/// Source of one family at a path point: friction plus, for the observer,
/// the part of the nudging not absorbed by the kernel.
fn source_at(ctx: &PhiCtx, edge: usize, family: Family, t: f64, x: f64) -> Result<f64> {
    let (sp, sm) = ctx.prev.pair(edge, t, x);
    let sigma = friction_sigma(&ctx.scenario.law, ctx.scenario.gamma, sp, sm);
    let (bp, bm) = match ctx.truth {
        Some(truth) if ctx.mu > 0.0 => nudging_remainder(
            &ctx.scenario.law,
            MeasurementMode::Velocity,
            ctx.mu,
            truth.pair(edge, t, x),
            (sp, sm),
        )?,
        _ => (0.0, 0.0),
    };
    Ok(match family {
        Family::Plus => -sigma + bp,
        Family::Minus => sigma + bm,
    })
}

/// Next-iterate value at `(t, x)`: kernel-damped entry value plus the
/// kernel-weighted path integral of the sources (composite trapezoid with
/// the kernel exact at the nodes). `depth` counts node hops; the horizon
/// condition guarantees a nested trace reaches the initial time.
fn eval_point(ctx: &PhiCtx, edge: usize, family: Family, x: f64, t: f64, depth: usize) -> Result<f64> {
    if t <= 0.0 {
        return Ok(ctx.prev.value(edge, family, 0.0, x));
    }
    let trace = trace_characteristic(ctx.scenario, ctx.prev, edge, family, x, t, ctx.substep)?;

    let mut integral = 0.0;
    let mut prev_sample: Option<(f64, f64)> = None;
    for &(r, p) in &trace.samples {
        let f = (-0.5 * ctx.mu * (t - r)).exp() * source_at(ctx, edge, family, r, p)?;
        if let Some((r0, f0)) = prev_sample {
            integral += 0.5 * (f0 + f) * (r - r0);
        }
        prev_sample = Some((r, f));
    }

    let base = match trace.hit {
        None => ctx.prev.value(edge, family, 0.0, trace.foot_position) * (-0.5 * ctx.mu * t).exp(),
        Some(end) => {
            if depth >= 1 {
                return Err(Error::Budget(
                    "a nested characteristic hit a second node; the horizon violates the crossing condition"
                        .into(),
                ));
            }
            let node = match end {
                EdgeEnd::Start => ctx.scenario.topology.edges[edge].from,
                EdgeEnd::End => ctx.scenario.topology.edges[edge].to,
            };
            let nv = node_value(ctx, node, trace.foot_time, edge, end, depth + 1)?;
            nv * (-0.5 * ctx.mu * (t - trace.foot_time)).exp()
        }
    };
    Ok(base + integral)
}

/// Outgoing invariant at a node for the edge a characteristic arrived
/// along: the incoming invariants of every incident edge are next-iterate
/// values (nested evaluation), then the junction coupling or the boundary
/// inversion fixes the outgoing ones.
fn node_value(ctx: &PhiCtx, node: usize, t: f64, want_edge: usize, want_end: EdgeEnd, depth: usize) -> Result<f64> {
    let topo = &ctx.scenario.topology;
    let inc = &topo.incidence[node];
    let incoming = inc
        .iter()
        .map(|&(e, end)| {
            let (family, x) = match end {
                EdgeEnd::Start => (Family::Minus, 0.0),
                EdgeEnd::End => (Family::Plus, ctx.prev.edge_length(e)),
            };
            eval_point(ctx, e, family, x, t, depth)
        })
        .collect::<Result<Vec<f64>>>()?;

    let law = &ctx.scenario.law;
    let outgoing = if let Some(bc) = ctx.scenario.boundary_for(node) {
        let (_, end0) = inc[0];
        let datum = bc.schedule.eval(ctx.t_offset + t);
        let out = match bc.quantity {
            BoundaryQuantity::MassFlux => invert_boundary_m(law, datum * end0.outward_sign(), incoming[0], None)?,
            BoundaryQuantity::Enthalpy => invert_boundary_h(law, datum, incoming[0], None)?,
        };
        vec![out]
    } else {
        couple_node(law, &incoming, None)?
    };
    let pos = inc
        .iter()
        .position(|&(e, end)| e == want_edge && end == want_end)
        .expect("arriving edge is incident to the node it hit");
    Ok(outgoing[pos])
}

/// One application of the fixed-point map: every lattice point of the next
/// iterate is evaluated through the integral formula along characteristics
/// of the previous iterate. The t = 0 slice is the (preserved) initial data.
pub fn apply_phi(
    scenario: &Scenario,
    budget: &SmallnessBudget,
    prev: &LatticeField,
    truth: Option<&LatticeField>,
    mu: f64,
    t_offset: f64,
) -> Result<LatticeField> {
    let mut next = prev.clone();
    let substep = prev
        .lengths
        .iter()
        .fold(f64::INFINITY, |acc, &l| acc.min(l / prev.n_x as f64))
        / budget.lambda_hi;
    let ctx = PhiCtx { scenario, prev, truth, mu, t_offset, substep };
    let dt = prev.t_max / prev.n_t as f64;
    for e in 0..prev.values.len() {
        let len = prev.lengths[e];
        for k in 1..=prev.n_t {
            let t = k as f64 * dt;
            for i in 0..=prev.n_x {
                let x = i as f64 * len / prev.n_x as f64;
                next.values[e][0][k][i] = eval_point(&ctx, e, Family::Plus, x, t, 0)?;
                next.values[e][1][k][i] = eval_point(&ctx, e, Family::Minus, x, t, 0)?;
            }
        }
    }
    Ok(next)
}

// ---------------------------------------------------------------------------
// Iteration driver
// ---------------------------------------------------------------------------

/// Per-iteration record of the fixed-point run.
#[derive(Debug, Clone)]
pub struct ContractionHistory {
    /// `‖S^{i+1} − S^i‖` after each application.
    pub diffs: Vec<f64>,
    /// Successive quotients of `diffs`.
    pub ratios: Vec<f64>,
    /// Sup-norm of each produced iterate.
    pub sup_norms: Vec<f64>,
    /// Largest x-slope of each produced iterate.
    pub lipschitz_consts: Vec<f64>,
    /// `‖Φ(S*) − S*‖` measured once more on the accepted fixed point.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// How the starting data fell outside the budget (empty if certified).
    pub budget_warnings: Vec<String>,
}

impl ContractionHistory {
    pub fn q_max(&self) -> Option<f64> {
        self.ratios.iter().cloned().fold(None, |acc, r| Some(acc.map_or(r, |a: f64| a.max(r))))
    }
}

/// Iterate the map from `initial` until successive iterates differ by at
/// most [`PICARD_TOL`]. Divergence (escape from the certified ball, ratios
/// at or above one three times in a row, a non-finite difference, or no
/// convergence within `max_iters`) is an error carrying the smallness
/// margins the data violated.
pub fn iterate_to_fixed_point(
    scenario: &Scenario,
    budget: &SmallnessBudget,
    initial: LatticeField,
    truth: Option<&LatticeField>,
    mu: f64,
    t_offset: f64,
    max_iters: usize,
) -> Result<(LatticeField, ContractionHistory)> {
    let budget_warnings = budget.data_violations(&initial);
    let mut history = ContractionHistory {
        diffs: Vec::new(),
        ratios: Vec::new(),
        sup_norms: Vec::new(),
        lipschitz_consts: Vec::new(),
        residual: f64::NAN,
        iterations: 0,
        converged: false,
        budget_warnings,
    };
    let describe_margins = |h: &ContractionHistory| {
        if h.budget_warnings.is_empty() {
            "data was within the certified budget".to_string()
        } else {
            h.budget_warnings.join("; ")
        }
    };

    let mut current = initial;
    for iter in 1..=max_iters {
        let next = apply_phi(scenario, budget, &current, truth, mu, t_offset).map_err(|e| {
            Error::Contraction(format!(
                "iteration {iter} failed: {e}; {}",
                describe_margins(&history)
            ))
        })?;
        let d = current.diff_norm(&next);
        let (lip, sup) = measure_lipschitz(&next);
        history.iterations = iter;
        if let Some(&prev_d) = history.diffs.last() {
            history.ratios.push(if prev_d > 0.0 { d / prev_d } else { 0.0 });
        }
        history.diffs.push(d);
        history.sup_norms.push(sup);
        history.lipschitz_consts.push(lip);
        current = next;

        if !d.is_finite() {
            return Err(Error::Contraction(format!(
                "iteration {iter} produced a non-finite update; {}",
                describe_margins(&history)
            )));
        }
        if sup > ESCAPE_FACTOR * budget.s_max {
            return Err(Error::Contraction(format!(
                "iterate left the certified ball: sup |S| = {sup:.3e} exceeds {ESCAPE_FACTOR} x S_max = {:.3e}; {}",
                ESCAPE_FACTOR * budget.s_max,
                describe_margins(&history)
            )));
        }
        let n = history.ratios.len();
        if n >= 3 && history.ratios[n - 3..].iter().all(|&q| q >= 1.0) && d > 10.0 * PICARD_TOL {
            return Err(Error::Contraction(format!(
                "no contraction: the last three ratios were {:?}; {}",
                &history.ratios[n - 3..],
                describe_margins(&history)
            )));
        }
        if d <= PICARD_TOL {
            history.converged = true;
            break;
        }
    }
    if !history.converged {
        return Err(Error::Contraction(format!(
            "no convergence within {max_iters} iterations (last difference {:.3e}); {}",
            history.diffs.last().copied().unwrap_or(f64::NAN),
            describe_margins(&history)
        )));
    }

    let check = apply_phi(scenario, budget, &current, truth, mu, t_offset)?;
    history.residual = current.diff_norm(&check);
    Ok((current, history))
}

/// Truth and observer fixed points over one horizon.
#[derive(Debug, Clone)]
pub struct PicardSolve {
    pub budget: SmallnessBudget,
    pub horizon: f64,
    pub truth: LatticeField,
    pub truth_history: ContractionHistory,
    /// Present when the scenario runs an observer (gain > 0, live mode).
    pub observer: Option<LatticeField>,
    pub observer_history: Option<ContractionHistory>,
}

/// Solve the scenario on one horizon: the plain system first, then (when a
/// gain and a live measurement mode are set) the observer against it. The
/// horizon defaults to the budget's admissible maximum.
pub fn solve_twin(
    scenario: &Scenario,
    s_max: f64,
    n_x: usize,
    n_t: usize,
    horizon: Option<f64>,
) -> Result<PicardSolve> {
    let budget = SmallnessBudget::derive(scenario, s_max)?;
    let t = horizon.unwrap_or(budget.t_max);
    budget.validate_horizon(t)?;

    let init_truth = LatticeField::from_profiles(scenario, false, n_x, n_t, t)?;
    let (truth, truth_history) =
        iterate_to_fixed_point(scenario, &budget, init_truth, None, 0.0, 0.0, MAX_PICARD_ITERS)?;

    let (observer, observer_history) = if scenario.mu > 0.0 && scenario.mode != MeasurementMode::None {
        let init_obs = LatticeField::from_profiles(scenario, true, n_x, n_t, t)?;
        let (field, hist) =
            iterate_to_fixed_point(scenario, &budget, init_obs, Some(&truth), scenario.mu, 0.0, MAX_PICARD_ITERS)?;
        (Some(field), Some(hist))
    } else {
        (None, None)
    };

    Ok(PicardSolve { budget, horizon: t, truth, truth_history, observer, observer_history })
}

// ---------------------------------------------------------------------------
// Semi-global continuation
// ---------------------------------------------------------------------------

/// One window of a chained solve.
#[derive(Debug, Clone)]
pub struct WindowSolve {
    pub t_start: f64,
    pub t_end: f64,
    pub solve: PicardSolve,
}

#[derive(Debug, Clone)]
pub struct SemiGlobalRun {
    pub windows: Vec<WindowSolve>,
}

impl SemiGlobalRun {
    /// Sup-norm of the observer (or truth, if no observer ran) per window.
    pub fn window_sups(&self) -> Vec<f64> {
        self.windows
            .iter()
            .map(|w| w.solve.observer.as_ref().unwrap_or(&w.solve.truth).sup_norm())
            .collect()
    }
}

/// Cover `[0, t_total]` with chained fixed-point solves, feeding each
/// window's final slice to the next as initial data. `forced_windows`
/// splits the horizon evenly instead of sizing windows from the budget;
/// every window is still validated and failures name the window.
pub fn semi_global_continuation(
    scenario: &Scenario,
    s_max: f64,
    n_x: usize,
    n_t: usize,
    t_total: f64,
    forced_windows: Option<usize>,
) -> Result<SemiGlobalRun> {
    if !(t_total > 0.0) || !t_total.is_finite() {
        return Err(Error::Budget(format!("total horizon must be positive, got {t_total}")));
    }
    if forced_windows == Some(0) {
        return Err(Error::Validation("window count must be at least 1".into()));
    }
    let mut work = scenario.clone();
    let mut windows = Vec::new();
    let mut t_done = 0.0;
    let eps = 1e-12 * t_total.max(1.0);
    let mut index = 0usize;
    while t_total - t_done > eps {
        index += 1;
        if index > 100_000 {
            return Err(Error::Budget("window count exploded; horizon shrank to nothing".into()));
        }
        let wrap = |e: Error| Error::Budget(format!("window {index} starting at t = {t_done:.6}: {e}"));
        let budget = SmallnessBudget::derive(&work, s_max).map_err(wrap)?;
        let remaining = t_total - t_done;
        let width = match forced_windows {
            Some(n) => (t_total / n as f64).min(remaining),
            None => {
                if 0.9 * budget.t_max >= remaining {
                    remaining
                } else {
                    0.9 * budget.t_max
                }
            }
        };
        budget.validate_horizon(width).map_err(wrap)?;

        let init_truth = LatticeField::from_profiles(&work, false, n_x, n_t, width).map_err(wrap)?;
        let (truth, truth_history) =
            iterate_to_fixed_point(&work, &budget, init_truth, None, 0.0, t_done, MAX_PICARD_ITERS)
                .map_err(wrap)?;
        let (observer, observer_history) = if work.mu > 0.0 && work.mode != MeasurementMode::None {
            let init_obs = LatticeField::from_profiles(&work, true, n_x, n_t, width).map_err(wrap)?;
            let (field, hist) =
                iterate_to_fixed_point(&work, &budget, init_obs, Some(&truth), work.mu, t_done, MAX_PICARD_ITERS)
                    .map_err(wrap)?;
            (Some(field), Some(hist))
        } else {
            (None, None)
        };

        work.initial = profiles_from_final_slice(&work, &truth).map_err(wrap)?;
        if let Some(ref obs) = observer {
            work.observer_initial = profiles_from_final_slice(&work, obs).map_err(wrap)?;
        }

        windows.push(WindowSolve {
            t_start: t_done,
            t_end: t_done + width,
            solve: PicardSolve {
                budget,
                horizon: width,
                truth,
                truth_history,
                observer,
                observer_history,
            },
        });
        t_done += width;
    }
    Ok(SemiGlobalRun { windows })
}

/// Convert a lattice's final time slice back into sampled profiles.
fn profiles_from_final_slice(scenario: &Scenario, field: &LatticeField) -> Result<Vec<EdgeProfiles>> {
    let mut out = Vec::with_capacity(scenario.topology.edges.len());
    for e in 0..scenario.topology.edges.len() {
        let len = field.edge_length(e);
        let (plus, minus) = field.slice(e, field.n_t());
        let mut rho = Vec::with_capacity(plus.len());
        let mut v = Vec::with_capacity(plus.len());
        for i in 0..plus.len() {
            let x = i as f64 * len / field.n_x() as f64;
            let (r, u) = from_riemann(&scenario.law, plus[i], minus[i])?;
            rho.push((x, r));
            v.push((x, u));
        }
        out.push(EdgeProfiles { rho: Profile::Samples(rho), v: Profile::Samples(v) });
    }
    Ok(out)
}

/// Evaluate the boundary admissibility of a scenario's schedules against
/// the budget's data bound over a horizon; returns violation descriptions.
pub fn boundary_data_violations(scenario: &Scenario, budget: &SmallnessBudget, horizon: f64) -> Vec<String> {
    let mut out = Vec::new();
    let windows = match boundary_windows(&scenario.law, budget.b_max) {
        Ok(w) => w,
        Err(e) => {
            out.push(format!("boundary windows not derivable at B_max: {e}"));
            return out;
        }
    };
    for bc in &scenario.boundary {
        for step in 0..=32 {
            let t = horizon * step as f64 / 32.0;
            let value = bc.schedule.eval(t);
            let ok = match bc.quantity {
                BoundaryQuantity::MassFlux => windows.admits_m(value),
                BoundaryQuantity::Enthalpy => windows.admits_h(value),
            };
            if !ok {
                out.push(format!(
                    "boundary datum {value:.6e} at node {} (t = {t:.4}) leaves the admissible window",
                    scenario.topology.nodes[bc.node]
                ));
                break;
            }
        }
    }
    out
}
