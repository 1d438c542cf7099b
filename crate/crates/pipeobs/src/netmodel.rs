//! Pressure laws, network topology, and scenario configuration.
//!
//! A scenario couples a pressure law, a pipe network, initial profiles for
//! the truth and observer systems, boundary schedules, and discretization
//! parameters. [`load_scenario`] parses and validates the JSON form described
//! in the repository README.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use serde::Deserialize;

use crate::{Error, Result};

/// Poincare constant for the interval inequalities used by the energy
/// diagnostics (`||w||_L2 <= C len ||w'||_L2` for `w` vanishing at one end).
pub const POINCARE_CONST: f64 = 2.0 / std::f64::consts::PI;

// ---------------------------------------------------------------------------
// Pressure laws
// ---------------------------------------------------------------------------

/// Barotropic pressure law `p(rho)` together with the derived quantities the
/// solver needs: the pressure potential `P` (with `p' = rho P''`), its
/// derivatives, and the density coordinate used by the Riemann invariants.
///
/// Both variants fix the gauge `P(rho_ref) = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PressureLaw {
    /// `p = c^2 rho`, sound speed constant.
    Isothermal { c: f64, rho_ref: f64 },
    /// `p = kappa rho^alpha`, `alpha > 1`.
    Power { kappa: f64, alpha: f64, rho_ref: f64 },
}

/// All law evaluations at one density, bundled for callers that need the
/// whole set (bindings, diagnostics).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LawBundle {
    pub pressure: f64,
    pub dpressure: f64,
    pub potential: f64,
    pub dpotential: f64,
    pub d2potential: f64,
    pub rho_coordinate: f64,
}

impl PressureLaw {
    pub fn isothermal(c: f64, rho_ref: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::Validation(format!("isothermal sound speed must be positive, got {c}")));
        }
        check_rho_ref(rho_ref)?;
        Ok(PressureLaw::Isothermal { c, rho_ref })
    }

    pub fn power(kappa: f64, alpha: f64, rho_ref: f64) -> Result<Self> {
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(Error::Validation(format!("power-law kappa must be positive, got {kappa}")));
        }
        if !(alpha > 1.0) || !alpha.is_finite() {
            return Err(Error::Validation(format!("power-law alpha must exceed 1, got {alpha}")));
        }
        check_rho_ref(rho_ref)?;
        Ok(PressureLaw::Power { kappa, alpha, rho_ref })
    }

    pub fn rho_ref(&self) -> f64 {
        match *self {
            PressureLaw::Isothermal { rho_ref, .. } | PressureLaw::Power { rho_ref, .. } => rho_ref,
        }
    }

    /// Reference sound speed `c = sqrt(p'(rho_ref))`; the characteristic
    /// coordinates are scaled by this constant.
    pub fn sound_ref(&self) -> f64 {
        match *self {
            PressureLaw::Isothermal { c, .. } => c,
            PressureLaw::Power { kappa, alpha, rho_ref } => (kappa * alpha * rho_ref.powf(alpha - 1.0)).sqrt(),
        }
    }

    /// `p(rho)`. Requires `rho > 0`.
    pub fn pressure(&self, rho: f64) -> f64 {
        debug_assert!(rho > 0.0);
        match *self {
            PressureLaw::Isothermal { c, .. } => c * c * rho,
            PressureLaw::Power { kappa, alpha, .. } => kappa * rho.powf(alpha),
        }
    }

    /// `p'(rho) = rho P''(rho)`, the squared local sound speed.
    pub fn dpressure(&self, rho: f64) -> f64 {
        debug_assert!(rho > 0.0);
        match *self {
            PressureLaw::Isothermal { c, .. } => c * c,
            PressureLaw::Power { kappa, alpha, .. } => kappa * alpha * rho.powf(alpha - 1.0),
        }
    }

    /// `p''(rho)`.
    pub fn d2pressure(&self, rho: f64) -> f64 {
        debug_assert!(rho > 0.0);
        match *self {
            PressureLaw::Isothermal { .. } => 0.0,
            PressureLaw::Power { kappa, alpha, .. } => kappa * alpha * (alpha - 1.0) * rho.powf(alpha - 2.0),
        }
    }

    /// Local sound speed `sqrt(p'(rho))`.
    pub fn sound_speed(&self, rho: f64) -> f64 {
        self.dpressure(rho).sqrt()
    }

    /// Pressure potential `P(rho)`, normalized so `P(rho_ref) = 0`.
    pub fn potential(&self, rho: f64) -> f64 {
        debug_assert!(rho > 0.0);
        match *self {
            PressureLaw::Isothermal { c, rho_ref } => c * c * rho * (rho / rho_ref).ln(),
            PressureLaw::Power { kappa, alpha, rho_ref } => {
                kappa / (alpha - 1.0) * (rho.powf(alpha) - rho_ref.powf(alpha))
                    - kappa * alpha / (alpha - 1.0) * rho_ref.powf(alpha - 1.0) * (rho - rho_ref)
            }
        }
    }

    /// `P'(rho)`, the specific enthalpy contribution of pressure.
    pub fn dpotential(&self, rho: f64) -> f64 {
        debug_assert!(rho > 0.0);
        match *self {
            PressureLaw::Isothermal { c, rho_ref } => c * c * (1.0 + (rho / rho_ref).ln()),
            PressureLaw::Power { kappa, alpha, rho_ref } => {
                kappa * alpha / (alpha - 1.0) * (rho.powf(alpha - 1.0) - rho_ref.powf(alpha - 1.0))
            }
        }
    }

    /// `P''(rho) = p'(rho)/rho`.
    pub fn d2potential(&self, rho: f64) -> f64 {
        self.dpressure(rho) / rho
    }

    /// `P'''(rho)`.
    pub fn d3potential(&self, rho: f64) -> f64 {
        debug_assert!(rho > 0.0);
        match *self {
            PressureLaw::Isothermal { c, .. } => -c * c / (rho * rho),
            PressureLaw::Power { kappa, alpha, .. } => kappa * alpha * (alpha - 2.0) * rho.powf(alpha - 3.0),
        }
    }

    /// Density part of the Riemann invariants:
    /// `rho_coordinate(rho) = int_{rho_ref}^{rho} sqrt(p'(s)) / (c s) ds`,
    /// a strictly increasing dimensionless coordinate with value 0 at
    /// `rho_ref`. The invariants are `S± = rho_coordinate(rho) ± v/c`.
    pub fn rho_coordinate(&self, rho: f64) -> f64 {
        debug_assert!(rho > 0.0);
        match *self {
            PressureLaw::Isothermal { rho_ref, .. } => (rho / rho_ref).ln(),
            PressureLaw::Power { alpha, rho_ref, .. } => {
                2.0 / (alpha - 1.0) * ((rho / rho_ref).powf(0.5 * (alpha - 1.0)) - 1.0)
            }
        }
    }

    /// Inverse of [`Self::rho_coordinate`]. Errors when `y` lies outside the
    /// coordinate's range (possible for the power law, whose range is bounded
    /// below by `-2/(alpha-1)`).
    pub fn rho_from_coordinate(&self, y: f64) -> Result<f64> {
        if !y.is_finite() {
            return Err(Error::Domain(format!("density coordinate must be finite, got {y}")));
        }
        match *self {
            PressureLaw::Isothermal { rho_ref, .. } => Ok(rho_ref * y.exp()),
            PressureLaw::Power { alpha, rho_ref, .. } => {
                let base = 1.0 + 0.5 * (alpha - 1.0) * y;
                if base <= 0.0 {
                    return Err(Error::Domain(format!(
                        "density coordinate {y} below the vacuum limit {} of the power law",
                        -2.0 / (alpha - 1.0)
                    )));
                }
                Ok(rho_ref * base.powf(2.0 / (alpha - 1.0)))
            }
        }
    }

    /// Derivative of the inverse coordinate map: `(rho_from_coordinate)'(y)
    /// = c rho / sqrt(p'(rho))` evaluated at `rho = rho_from_coordinate(y)`.
    pub fn drho_from_coordinate(&self, y: f64) -> Result<f64> {
        let rho = self.rho_from_coordinate(y)?;
        Ok(self.sound_ref() * rho / self.sound_speed(rho))
    }

    /// All evaluations at once. Errors on non-positive density.
    pub fn bundle(&self, rho: f64) -> Result<LawBundle> {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::Domain(format!("density must be positive and finite, got {rho}")));
        }
        Ok(LawBundle {
            pressure: self.pressure(rho),
            dpressure: self.dpressure(rho),
            potential: self.potential(rho),
            dpotential: self.dpotential(rho),
            d2potential: self.d2potential(rho),
            rho_coordinate: self.rho_coordinate(rho),
        })
    }

    /// Quadrature evaluation of the density coordinate, independent of the
    /// closed forms above (adaptive Simpson on the defining integrand). Slow;
    /// meant for cross-checks.
    pub fn rho_coordinate_numeric(&self, rho: f64) -> Result<f64> {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::Domain(format!("density must be positive and finite, got {rho}")));
        }
        let c = self.sound_ref();
        let f = |s: f64| self.sound_speed(s) / (c * s);
        Ok(adaptive_simpson(&f, self.rho_ref(), rho, 1e-12, 40))
    }

    /// Bisection + Newton-polish inversion of the density coordinate,
    /// independent of the closed-form inverse. Slow; meant for cross-checks.
    pub fn rho_from_coordinate_numeric(&self, y: f64) -> Result<f64> {
        if !y.is_finite() {
            return Err(Error::Domain(format!("density coordinate must be finite, got {y}")));
        }
        // Bracket by doubling outward from rho_ref; rho_coordinate is
        // strictly increasing in rho.
        let (mut lo, mut hi) = (self.rho_ref(), self.rho_ref());
        for _ in 0..2048 {
            if self.rho_coordinate(lo) <= y {
                break;
            }
            lo *= 0.5;
        }
        for _ in 0..2048 {
            if self.rho_coordinate(hi) >= y {
                break;
            }
            hi *= 2.0;
        }
        if self.rho_coordinate(lo) > y || self.rho_coordinate(hi) < y {
            return Err(Error::Domain(format!("density coordinate {y} outside the invertible range")));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.rho_coordinate(mid) < y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // Newton polish; derivative d(rho_coordinate)/drho = sqrt(p')/(c rho).
        let mut rho = 0.5 * (lo + hi);
        for _ in 0..4 {
            let g = self.rho_coordinate(rho) - y;
            let dg = self.sound_speed(rho) / (self.sound_ref() * rho);
            let next = rho - g / dg;
            if next > 0.0 && next.is_finite() {
                rho = next;
            }
        }
        Ok(rho)
    }

    /// Extremes of the law derivatives over a density band, plus the subsonic
    /// smallness check `4 v_bar^2 <= min p'` used by the analysis.
    pub fn bound_constants(&self, band: &Band) -> Result<BoundConstants> {
        band.validate()?;
        let (lo, hi) = (band.rho_lo, band.rho_hi);
        // Every derivative below is monotone in rho for both laws, so the
        // extremes sit at the band endpoints.
        let ends = [lo, hi];
        let minmax = |f: &dyn Fn(f64) -> f64| {
            let a = f(ends[0]);
            let b = f(ends[1]);
            (a.min(b), a.max(b))
        };
        let (cpp_lo, cpp_hi) = minmax(&|r| self.d2potential(r));
        let (dp_lo, dp_hi) = minmax(&|r| self.dpressure(r));
        let (_, cppp_hi) = minmax(&|r| self.d3potential(r).abs());
        let (_, dpp_hi) = minmax(&|r| self.d2pressure(r).abs());
        Ok(BoundConstants {
            band: *band,
            cpp_lo,
            cpp_hi,
            cppp_hi,
            dp_lo,
            dp_hi,
            dpp_hi,
            subsonic_margin_ok: 4.0 * band.v_bar * band.v_bar <= dp_lo,
        })
    }
}

fn check_rho_ref(rho_ref: f64) -> Result<()> {
    if !(rho_ref > 0.0) || !rho_ref.is_finite() {
        return Err(Error::Validation(format!("reference density must be positive, got {rho_ref}")));
    }
    Ok(())
}

/// Admissible state band: densities in `[rho_lo, rho_hi]`, velocities with
/// `|v| <= v_bar`.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Band {
    pub rho_lo: f64,
    pub rho_hi: f64,
    pub v_bar: f64,
}

impl Band {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho_lo > 0.0 && self.rho_hi > self.rho_lo) {
            return Err(Error::Validation(format!(
                "band must satisfy 0 < rho_lo < rho_hi, got [{}, {}]",
                self.rho_lo, self.rho_hi
            )));
        }
        if !(self.v_bar > 0.0) || !self.v_bar.is_finite() {
            return Err(Error::Validation(format!("band velocity bound must be positive, got {}", self.v_bar)));
        }
        Ok(())
    }

    pub fn contains_rho(&self, rho: f64) -> bool {
        rho >= self.rho_lo && rho <= self.rho_hi
    }
}

/// Extremes of law derivatives over a band.
///
/// `cpp_*` bound `P''`, `dp_*` bound `p'`, `cppp_hi` bounds `|P'''|`,
/// `dpp_hi` bounds `|p''|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundConstants {
    pub band: Band,
    pub cpp_lo: f64,
    pub cpp_hi: f64,
    pub cppp_hi: f64,
    pub dp_lo: f64,
    pub dp_hi: f64,
    pub dpp_hi: f64,
    /// Whether `4 v_bar^2 <= dp_lo`, the subsonic smallness margin.
    pub subsonic_margin_ok: bool,
}

/// Adaptive Simpson quadrature used by the numeric coordinate path and by
/// test oracles.
pub(crate) fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
    }
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let left = simpson(f, a, m);
        let right = simpson(f, m, b);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, left, 0.5 * tol, depth - 1) + rec(f, m, b, right, 0.5 * tol, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    rec(f, a, b, simpson(f, a, b), tol, depth)
}

// ---------------------------------------------------------------------------
// Topology
// ---------------------------------------------------------------------------

/// Which end of an edge touches a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeEnd {
    /// The edge's `x = 0` end.
    Start,
    /// The edge's `x = length` end.
    End,
}

impl EdgeEnd {
    /// Sign of the outward (away from the node) direction relative to the
    /// edge's own x axis: +1 at the start, -1 at the end.
    pub fn outward_sign(self) -> f64 {
        match self {
            EdgeEnd::Start => 1.0,
            EdgeEnd::End => -1.0,
        }
    }
}

/// Directed pipe between two nodes; `x` runs from `from` (x = 0) to `to`
/// (x = length).
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub name: String,
    pub from: usize,
    pub to: usize,
    pub length: f64,
}

/// Pipe network: named nodes, directed edges, and the node-edge incidence.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub nodes: Vec<String>,
    pub edges: Vec<Edge>,
    /// Per node: (edge index, which end of that edge touches the node).
    pub incidence: Vec<Vec<(usize, EdgeEnd)>>,
}

impl Topology {
    pub fn new(nodes: Vec<String>, edges: Vec<Edge>) -> Result<Self> {
        if edges.is_empty() {
            return Err(Error::Validation("topology needs at least one edge".into()));
        }
        let mut seen = HashSet::new();
        for n in &nodes {
            if !seen.insert(n.clone()) {
                return Err(Error::Validation(format!("duplicate node name {n:?}")));
            }
        }
        let mut seen = HashSet::new();
        let mut incidence = vec![Vec::new(); nodes.len()];
        for (i, e) in edges.iter().enumerate() {
            if !seen.insert(e.name.clone()) {
                return Err(Error::Validation(format!("duplicate edge name {:?}", e.name)));
            }
            if e.from >= nodes.len() || e.to >= nodes.len() {
                return Err(Error::Validation(format!("edge {:?} references a missing node", e.name)));
            }
            if e.from == e.to {
                return Err(Error::Validation(format!("edge {:?} is a self-loop", e.name)));
            }
            if !(e.length > 0.0) || !e.length.is_finite() {
                return Err(Error::Validation(format!("edge {:?} must have positive length, got {}", e.name, e.length)));
            }
            incidence[e.from].push((i, EdgeEnd::Start));
            incidence[e.to].push((i, EdgeEnd::End));
        }
        let topo = Topology { nodes, edges, incidence };
        if !topo.is_connected() {
            return Err(Error::Validation("network is not connected".into()));
        }
        Ok(topo)
    }

    pub fn degree(&self, node: usize) -> usize {
        self.incidence[node].len()
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.nodes.len()];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(n) = queue.pop_front() {
            for &(e, end) in &self.incidence[n] {
                let other = match end {
                    EdgeEnd::Start => self.edges[e].to,
                    EdgeEnd::End => self.edges[e].from,
                };
                if !seen[other] {
                    seen[other] = true;
                    queue.push_back(other);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// A tree has no cycles; with connectivity this is an edge count check.
    pub fn is_tree(&self) -> bool {
        self.edges.len() + 1 == self.nodes.len()
    }

    /// Star: one center node incident to every edge, all other nodes of
    /// degree 1. Returns the center.
    pub fn star_center(&self) -> Option<usize> {
        let center = (0..self.nodes.len()).find(|&n| self.degree(n) == self.edges.len())?;
        let leaves_ok = (0..self.nodes.len()).all(|n| n == center || self.degree(n) == 1);
        (leaves_ok && self.nodes.len() == self.edges.len() + 1).then_some(center)
    }

    pub fn total_length(&self) -> f64 {
        self.edges.iter().map(|e| e.length).sum()
    }

    pub fn max_length(&self) -> f64 {
        self.edges.iter().map(|e| e.length).fold(0.0, f64::max)
    }

    pub fn min_length(&self) -> f64 {
        self.edges.iter().map(|e| e.length).fold(f64::INFINITY, f64::min)
    }

    /// Interior nodes: degree >= 2 (degree-1 nodes without a boundary
    /// condition are walls but still use the coupling solve).
    pub fn interior_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|&n| self.degree(n) >= 2)
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n == name)
    }

    pub fn edge_index(&self, name: &str) -> Option<usize> {
        self.edges.iter().position(|e| e.name == name)
    }
}

// ---------------------------------------------------------------------------
// Profiles, schedules, measurement modes
// ---------------------------------------------------------------------------

/// Initial profile of one field along one edge.
#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    Constant(f64),
    /// Values at x = 0 and x = length, linearly interpolated.
    Linear { left: f64, right: f64 },
    /// Piecewise-linear through `(x, value)` samples; clamped outside the
    /// sampled range.
    Samples(Vec<(f64, f64)>),
}

impl Profile {
    pub fn eval(&self, x: f64, length: f64) -> f64 {
        match self {
            Profile::Constant(v) => *v,
            Profile::Linear { left, right } => left + (right - left) * (x / length).clamp(0.0, 1.0),
            Profile::Samples(samples) => {
                if x <= samples[0].0 {
                    return samples[0].1;
                }
                if x >= samples[samples.len() - 1].0 {
                    return samples[samples.len() - 1].1;
                }
                let i = samples.partition_point(|&(sx, _)| sx <= x);
                let (x0, y0) = samples[i - 1];
                let (x1, y1) = samples[i];
                y0 + (y1 - y0) * (x - x0) / (x1 - x0)
            }
        }
    }

    fn validate(&self, length: f64, what: &str) -> Result<()> {
        match self {
            Profile::Constant(v) => {
                if !v.is_finite() {
                    return Err(Error::Validation(format!("{what}: non-finite constant")));
                }
            }
            Profile::Linear { left, right } => {
                if !left.is_finite() || !right.is_finite() {
                    return Err(Error::Validation(format!("{what}: non-finite endpoint value")));
                }
            }
            Profile::Samples(samples) => {
                if samples.len() < 2 {
                    return Err(Error::Validation(format!("{what}: need at least two samples")));
                }
                for w in samples.windows(2) {
                    if !(w[1].0 > w[0].0) {
                        return Err(Error::Validation(format!("{what}: sample positions must strictly increase")));
                    }
                }
                for &(x, y) in samples {
                    if !x.is_finite() || !y.is_finite() {
                        return Err(Error::Validation(format!("{what}: non-finite sample")));
                    }
                    if x < -1e-12 || x > length + 1e-12 {
                        return Err(Error::Validation(format!(
                            "{what}: sample position {x} outside the edge [0, {length}]"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Density and velocity profiles for one edge.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeProfiles {
    pub rho: Profile,
    pub v: Profile,
}

/// Time schedule of a boundary datum.
#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    Constant(f64),
    /// Piecewise-linear through `(t, value)` knots; clamped outside.
    PiecewiseLinear(Vec<(f64, f64)>),
}

impl Schedule {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Schedule::Constant(v) => *v,
            Schedule::PiecewiseLinear(knots) => {
                if t <= knots[0].0 {
                    return knots[0].1;
                }
                if t >= knots[knots.len() - 1].0 {
                    return knots[knots.len() - 1].1;
                }
                let i = knots.partition_point(|&(kt, _)| kt <= t);
                let (t0, y0) = knots[i - 1];
                let (t1, y1) = knots[i];
                y0 + (y1 - y0) * (t - t0) / (t1 - t0)
            }
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        match self {
            Schedule::Constant(v) => {
                if !v.is_finite() {
                    return Err(Error::Validation(format!("{what}: non-finite constant")));
                }
            }
            Schedule::PiecewiseLinear(knots) => {
                if knots.len() < 2 {
                    return Err(Error::Validation(format!("{what}: need at least two knots")));
                }
                for w in knots.windows(2) {
                    if !(w[1].0 > w[0].0) {
                        return Err(Error::Validation(format!("{what}: knot times must strictly increase")));
                    }
                }
                for &(t, y) in knots {
                    if !t.is_finite() || !y.is_finite() {
                        return Err(Error::Validation(format!("{what}: non-finite knot")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Which boundary quantity a schedule prescribes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryQuantity {
    /// Edge-oriented mass flux `m = rho v` at the node.
    MassFlux,
    /// Total specific enthalpy `h = v^2/2 + P'(rho)` at the node.
    Enthalpy,
}

/// One boundary condition: a schedule for `m` or `h` at a degree-1 node.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryCondition {
    pub node: usize,
    pub quantity: BoundaryQuantity,
    pub schedule: Schedule,
}

/// What the observer measures, hence the shape of its nudging term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MeasurementMode {
    /// Plain forward simulation, no nudging.
    #[default]
    None,
    Velocity,
    Density,
    MassFlux,
}

impl MeasurementMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            MeasurementMode::None => "none",
            MeasurementMode::Velocity => "velocity",
            MeasurementMode::Density => "density",
            MeasurementMode::MassFlux => "massflow",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(MeasurementMode::None),
            "velocity" => Ok(MeasurementMode::Velocity),
            "density" => Ok(MeasurementMode::Density),
            "massflow" => Ok(MeasurementMode::MassFlux),
            other => Err(Error::Validation(format!(
                "unknown measurement mode {other:?} (expected none, velocity, density, or massflow)"
            ))),
        }
    }
}

// ---------------------------------------------------------------------------
// Field state
// ---------------------------------------------------------------------------

/// Cell-centered density/velocity fields on every edge at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub time: f64,
    pub edges: Vec<EdgeField>,
}

/// One edge's fields at the cell centers `x_j = (j + 1/2) dx`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeField {
    pub rho: Vec<f64>,
    pub v: Vec<f64>,
}

// ---------------------------------------------------------------------------
// Scenario
// ---------------------------------------------------------------------------

/// A fully validated simulation setup.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub law: PressureLaw,
    pub band: Band,
    pub bounds: BoundConstants,
    pub gamma: f64,
    pub mu: f64,
    pub mode: MeasurementMode,
    pub topology: Topology,
    /// Per-edge truth profiles, indexed like `topology.edges`.
    pub initial: Vec<EdgeProfiles>,
    /// Per-edge observer profiles; defaults to `initial`.
    pub observer_initial: Vec<EdgeProfiles>,
    pub boundary: Vec<BoundaryCondition>,
    pub cells: usize,
    pub cfl: f64,
    pub t_end: f64,
}

impl Scenario {
    /// Cell width on one edge.
    pub fn dx(&self, edge: usize) -> f64 {
        self.topology.edges[edge].length / self.cells as f64
    }

    /// Cell-center positions on one edge.
    pub fn cell_centers(&self, edge: usize) -> Vec<f64> {
        let dx = self.dx(edge);
        (0..self.cells).map(|j| (j as f64 + 0.5) * dx).collect()
    }

    /// The boundary condition attached to a node, if any.
    pub fn boundary_for(&self, node: usize) -> Option<&BoundaryCondition> {
        self.boundary.iter().find(|bc| bc.node == node)
    }

    /// Sample the truth (or observer) initial profiles at the cell centers.
    pub fn initial_state(&self, observer: bool) -> FieldState {
        let profiles = if observer { &self.observer_initial } else { &self.initial };
        let edges = profiles
            .iter()
            .enumerate()
            .map(|(e, p)| {
                let len = self.topology.edges[e].length;
                let xs = self.cell_centers(e);
                EdgeField {
                    rho: xs.iter().map(|&x| p.rho.eval(x, len)).collect(),
                    v: xs.iter().map(|&x| p.v.eval(x, len)).collect(),
                }
            })
            .collect();
        FieldState { time: 0.0, edges }
    }
}

// ---------------------------------------------------------------------------
// JSON configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    topology: RawTopology,
    law: RawLaw,
    physics: RawPhysics,
    initial: BTreeMap<String, RawEdgeProfiles>,
    #[serde(default)]
    observer_initial: Option<BTreeMap<String, RawEdgeProfiles>>,
    #[serde(default)]
    boundary: Vec<RawBoundary>,
    grid: RawGrid,
    time: RawTime,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTopology {
    nodes: Vec<String>,
    edges: Vec<RawEdge>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEdge {
    name: String,
    from: String,
    to: String,
    length: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLaw {
    kind: String,
    params: serde_json::Value,
    #[serde(default = "one")]
    rho_ref: f64,
    #[serde(default)]
    band: Option<Band>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct IsothermalParams {
    c: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PowerParams {
    kappa: f64,
    alpha: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPhysics {
    gamma: f64,
    #[serde(default)]
    mu: f64,
    #[serde(default = "default_mode")]
    mode: String,
}

fn default_mode() -> String {
    "none".into()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
enum RawProfile {
    Constant(f64),
    Linear([f64; 2]),
    Samples(Vec<[f64; 2]>),
}

impl From<RawProfile> for Profile {
    fn from(raw: RawProfile) -> Self {
        match raw {
            RawProfile::Constant(v) => Profile::Constant(v),
            RawProfile::Linear([l, r]) => Profile::Linear { left: l, right: r },
            RawProfile::Samples(s) => Profile::Samples(s.into_iter().map(|[x, y]| (x, y)).collect()),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEdgeProfiles {
    rho: RawProfile,
    v: RawProfile,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
enum RawSchedule {
    Constant(f64),
    PiecewiseLinear(Vec<[f64; 2]>),
}

impl From<RawSchedule> for Schedule {
    fn from(raw: RawSchedule) -> Self {
        match raw {
            RawSchedule::Constant(v) => Schedule::Constant(v),
            RawSchedule::PiecewiseLinear(k) => Schedule::PiecewiseLinear(k.into_iter().map(|[t, y]| (t, y)).collect()),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBoundary {
    node: String,
    quantity: String,
    schedule: RawSchedule,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    cells: usize,
    #[serde(default = "default_cfl")]
    cfl: f64,
}

fn default_cfl() -> f64 {
    0.5
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTime {
    #[serde(rename = "T")]
    t_end: f64,
}

/// Parse and validate a scenario from its JSON text.
///
/// Parse failures carry the underlying line/column message; validation
/// failures name the offending entity. Compatibility of the initial data with
/// the boundary schedules is deliberately NOT checked here (the solver audits
/// it at run time), since mildly incompatible observer data is a legitimate
/// experiment.
pub fn load_scenario(text: &str) -> Result<Scenario> {
    let raw: RawConfig = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    build_scenario(raw)
}

fn build_scenario(raw: RawConfig) -> Result<Scenario> {
    let law = match raw.law.kind.as_str() {
        "isothermal" => {
            let p: IsothermalParams =
                serde_json::from_value(raw.law.params).map_err(|e| Error::Parse(format!("law.params: {e}")))?;
            PressureLaw::isothermal(p.c, raw.law.rho_ref)?
        }
        "power" => {
            let p: PowerParams =
                serde_json::from_value(raw.law.params).map_err(|e| Error::Parse(format!("law.params: {e}")))?;
            PressureLaw::power(p.kappa, p.alpha, raw.law.rho_ref)?
        }
        other => {
            return Err(Error::Validation(format!(
                "unknown pressure law {other:?} (expected isothermal or power)"
            )))
        }
    };

    let band = match raw.law.band {
        Some(b) => b,
        None => default_band(&law),
    };
    band.validate()?;
    if !band.contains_rho(law.rho_ref()) {
        return Err(Error::Validation(format!(
            "reference density {} outside the band [{}, {}]",
            law.rho_ref(),
            band.rho_lo,
            band.rho_hi
        )));
    }
    let bounds = law.bound_constants(&band)?;

    // Topology: resolve node names to indices.
    let node_names = raw.topology.nodes;
    let node_idx: HashMap<&str, usize> = node_names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let mut edges = Vec::with_capacity(raw.topology.edges.len());
    for e in &raw.topology.edges {
        let from = *node_idx
            .get(e.from.as_str())
            .ok_or_else(|| Error::Validation(format!("edge {:?}: unknown node {:?}", e.name, e.from)))?;
        let to = *node_idx
            .get(e.to.as_str())
            .ok_or_else(|| Error::Validation(format!("edge {:?}: unknown node {:?}", e.name, e.to)))?;
        edges.push(Edge { name: e.name.clone(), from, to, length: e.length });
    }
    let topology = Topology::new(node_names, edges)?;

    if !(raw.physics.gamma >= 0.0) || !raw.physics.gamma.is_finite() {
        return Err(Error::Validation(format!("friction gamma must be >= 0, got {}", raw.physics.gamma)));
    }
    if !(raw.physics.mu >= 0.0) || !raw.physics.mu.is_finite() {
        return Err(Error::Validation(format!("observer gain mu must be >= 0, got {}", raw.physics.mu)));
    }
    let mode = MeasurementMode::parse(&raw.physics.mode)?;

    let initial = collect_profiles(&topology, raw.initial, "initial")?;
    let observer_initial = match raw.observer_initial {
        Some(map) => collect_profiles(&topology, map, "observer_initial")?,
        None => initial.clone(),
    };

    let mut boundary = Vec::with_capacity(raw.boundary.len());
    let mut seen_nodes = HashSet::new();
    for b in raw.boundary {
        let node = topology
            .node_index(&b.node)
            .ok_or_else(|| Error::Validation(format!("boundary: unknown node {:?}", b.node)))?;
        if !seen_nodes.insert(node) {
            return Err(Error::Validation(format!("boundary: node {:?} listed twice", b.node)));
        }
        if topology.degree(node) != 1 {
            return Err(Error::Validation(format!(
                "boundary: node {:?} has degree {}, boundary conditions require degree 1",
                b.node,
                topology.degree(node)
            )));
        }
        let quantity = match b.quantity.as_str() {
            "m" => BoundaryQuantity::MassFlux,
            "h" => BoundaryQuantity::Enthalpy,
            other => {
                return Err(Error::Validation(format!(
                    "boundary: unknown quantity {other:?} (expected \"m\" or \"h\")"
                )))
            }
        };
        let schedule: Schedule = b.schedule.into();
        schedule.validate(&format!("boundary schedule at {:?}", topology.nodes[node]))?;
        boundary.push(BoundaryCondition { node, quantity, schedule });
    }

    if raw.grid.cells < 4 {
        return Err(Error::Validation(format!("grid.cells must be at least 4, got {}", raw.grid.cells)));
    }
    if !(raw.grid.cfl > 0.0 && raw.grid.cfl <= 1.0) {
        return Err(Error::Validation(format!("grid.cfl must lie in (0, 1], got {}", raw.grid.cfl)));
    }
    if !(raw.time.t_end > 0.0) || !raw.time.t_end.is_finite() {
        return Err(Error::Validation(format!("time.T must be positive, got {}", raw.time.t_end)));
    }

    Ok(Scenario {
        name: "scenario".into(),
        law,
        band,
        bounds,
        gamma: raw.physics.gamma,
        mu: raw.physics.mu,
        mode,
        topology,
        initial,
        observer_initial,
        boundary,
        cells: raw.grid.cells,
        cfl: raw.grid.cfl,
        t_end: raw.time.t_end,
    })
}

/// Default band around the reference density, with a velocity bound well
/// inside the subsonic margin (half the value that would degenerate the
/// norm-equivalence constants to zero).
pub fn default_band(law: &PressureLaw) -> Band {
    let rho_lo = 0.5 * law.rho_ref();
    let rho_hi = 2.0 * law.rho_ref();
    // min P'' over [rho_lo, rho_hi]; monotone for both laws.
    let cpp_lo = law.d2potential(rho_lo).min(law.d2potential(rho_hi));
    Band { rho_lo, rho_hi, v_bar: 0.25 * (rho_lo * cpp_lo).sqrt() }
}

fn collect_profiles(
    topology: &Topology,
    mut map: BTreeMap<String, RawEdgeProfiles>,
    what: &str,
) -> Result<Vec<EdgeProfiles>> {
    let mut out = Vec::with_capacity(topology.edges.len());
    for e in &topology.edges {
        let raw = map
            .remove(&e.name)
            .ok_or_else(|| Error::Validation(format!("{what}: missing profiles for edge {:?}", e.name)))?;
        let rho: Profile = raw.rho.into();
        let v: Profile = raw.v.into();
        rho.validate(e.length, &format!("{what}.{}.rho", e.name))?;
        v.validate(e.length, &format!("{what}.{}.v", e.name))?;
        out.push(EdgeProfiles { rho, v });
    }
    if let Some(extra) = map.into_keys().next() {
        return Err(Error::Validation(format!("{what}: profiles for unknown edge {extra:?}")));
    }
    Ok(out)
}
