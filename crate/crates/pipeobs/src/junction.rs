//! Node coupling and boundary-condition inversion in invariant variables.
//!
//! Node-local convention: every edge incident to a node is re-oriented so the
//! node sits at the edge's local origin. Re-orientation flips the velocity
//! sign, which makes the invariant FAMILIES swap roles without any sign
//! change on the values: at an edge's start node the incoming invariant is
//! `s_minus(0)` and the outgoing one is `s_plus(0)`; at its end node the
//! incoming invariant is `s_plus(len)` and the outgoing one `s_minus(len)`.
//! Here `r_in[i]` denotes the incoming and `r_out[i]` the outgoing invariant
//! of incident edge `i`, and the node-local velocity `(c/2)(r_out - r_in)`
//! points from the node into the edge.
//!
//! Coupling conditions at an interior node: node-local mass fluxes sum to
//! zero and total specific enthalpy is equal across all incident edges.
//! Boundary nodes instead prescribe the edge-oriented mass flux `m_b` or the
//! enthalpy `h_b`; `m_b` is given in the EDGE's own orientation, so callers
//! at an edge's end node negate it before passing it here.

use crate::netmodel::PressureLaw;
use crate::riemann::enthalpy_from_riemann;
use crate::{Error, Result};

/// Convergence tolerance (infinity norm of the residual) for all node and
/// boundary solves.
pub const NEWTON_TOL: f64 = 1e-10;
const MAX_NEWTON_ITERS: usize = 50;
const MAX_HALVINGS: usize = 30;

/// Residual of the coupling system for a candidate outgoing vector.
///
/// Component 0 is the mass balance `sum_i rho_i (r_out[i] - r_in[i])` (the
/// common factor `c/2` is dropped; it does not move the root), components
/// `k >= 1` are the enthalpy differences `h_k - h_{k-1}`.
pub fn coupling_residual(law: &PressureLaw, r_out: &[f64], r_in: &[f64]) -> Result<Vec<f64>> {
    if r_out.len() != r_in.len() || r_in.is_empty() {
        return Err(Error::Domain("coupling residual needs matching, non-empty invariant vectors".into()));
    }
    let n = r_in.len();
    let mut f = vec![0.0; n];
    let mut h_prev = 0.0;
    for i in 0..n {
        let rho = law.rho_from_coordinate(0.5 * (r_out[i] + r_in[i]))?;
        f[0] += rho * (r_out[i] - r_in[i]);
        let h = enthalpy_from_riemann(law, r_out[i], r_in[i])?;
        if i > 0 {
            f[i] = h - h_prev;
        }
        h_prev = h;
    }
    Ok(f)
}

/// Solve the coupling system for the outgoing invariants at one node.
///
/// Damped Newton iteration with analytic Jacobian, warm-startable with the
/// previous solution; the default initial guess `r_out = r_in` has zero mass
/// residual. The degenerate single-edge node acts as a wall (`r_out = r_in`,
/// zero node-local velocity).
pub fn couple_node(law: &PressureLaw, r_in: &[f64], warm: Option<&[f64]>) -> Result<Vec<f64>> {
    let n = r_in.len();
    if n == 0 {
        return Err(Error::Domain("node coupling needs at least one incident edge".into()));
    }
    let mut x = match warm {
        Some(w) if w.len() == n => w.to_vec(),
        _ => r_in.to_vec(),
    };
    let mut f = match coupling_residual(law, &x, r_in) {
        Ok(f) => f,
        // A stale warm start can sit outside the law's domain; restart cold.
        Err(_) => {
            x = r_in.to_vec();
            coupling_residual(law, &x, r_in)?
        }
    };
    for _ in 0..MAX_NEWTON_ITERS {
        let norm = inf_norm(&f);
        if norm <= NEWTON_TOL {
            return Ok(x);
        }
        let jac = coupling_jacobian(law, &x, r_in)?;
        let step = solve_dense(jac, f.iter().map(|v| -v).collect())
            .ok_or_else(|| Error::Solve("singular Jacobian in node coupling".into()))?;
        let mut t = 1.0;
        let mut advanced = false;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = x.iter().zip(&step).map(|(xi, si)| xi + t * si).collect();
            if let Ok(tf) = coupling_residual(law, &trial, r_in) {
                if inf_norm(&tf) < norm {
                    x = trial;
                    f = tf;
                    advanced = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !advanced {
            return Err(Error::Solve(format!(
                "node coupling stalled at residual {norm:.3e} (incoming data {r_in:?})"
            )));
        }
    }
    let norm = inf_norm(&f);
    if norm <= NEWTON_TOL {
        Ok(x)
    } else {
        Err(Error::Solve(format!(
            "node coupling did not converge: residual {norm:.3e} after {MAX_NEWTON_ITERS} iterations"
        )))
    }
}

fn coupling_jacobian(law: &PressureLaw, r_out: &[f64], r_in: &[f64]) -> Result<Vec<Vec<f64>>> {
    let n = r_in.len();
    let c = law.sound_ref();
    let mut jac = vec![vec![0.0; n]; n];
    let mut dh = vec![0.0; n];
    for j in 0..n {
        let rho = law.rho_from_coordinate(0.5 * (r_out[j] + r_in[j]))?;
        let a = law.sound_speed(rho);
        let drho = 0.5 * c * rho / a;
        jac[0][j] = drho * (r_out[j] - r_in[j]) + rho;
        // dh/dr_out = c/2 * (node-local lambda_plus).
        dh[j] = 0.25 * c * c * (r_out[j] - r_in[j]) + 0.5 * c * a;
    }
    for k in 1..n {
        jac[k][k] = dh[k];
        jac[k][k - 1] = -dh[k - 1];
    }
    Ok(jac)
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Gaussian elimination with partial pivoting; nodes have a handful of
/// incident edges, so a dense solve is plenty.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut sum = b[row];
        for k in row + 1..n {
            sum -= a[row][k] * x[k];
        }
        x[row] = sum / a[row][row];
    }
    Some(x)
}

/// Invert a mass-flux boundary condition: find the outgoing invariant
/// `r_out` such that the node-local state carries mass flux `m_node`.
///
/// `m_node` must already be in NODE-LOCAL orientation (callers negate the
/// edge-oriented `m_b` at an edge's end node). The map is strictly increasing
/// in `r_out` on the subsonic branch, so a safeguarded Newton/bisection
/// always lands; errors if no subsonic solution exists.
pub fn invert_boundary_m(law: &PressureLaw, m_node: f64, r_in: f64, warm: Option<f64>) -> Result<f64> {
    let c = law.sound_ref();
    let g = |r_out: f64| -> Result<f64> {
        let rho = law.rho_from_coordinate(0.5 * (r_out + r_in))?;
        Ok(rho * 0.5 * c * (r_out - r_in) - m_node)
    };
    let dg = |r_out: f64| -> Result<f64> {
        let rho = law.rho_from_coordinate(0.5 * (r_out + r_in))?;
        let a = law.sound_speed(rho);
        let v = 0.5 * c * (r_out - r_in);
        Ok(0.5 * c * rho * (1.0 + v / a))
    };
    scalar_root(&g, &dg, warm.unwrap_or(r_in), r_in, "mass-flux boundary")
}

/// Invert an enthalpy boundary condition on the subsonic branch
/// (`lambda_plus > 0` node-locally, where the map is strictly increasing).
/// Errors if `h_node` lies below the branch minimum (no subsonic state).
pub fn invert_boundary_h(law: &PressureLaw, h_node: f64, r_in: f64, warm: Option<f64>) -> Result<f64> {
    let c = law.sound_ref();
    let g = |r_out: f64| -> Result<f64> { Ok(enthalpy_from_riemann(law, r_out, r_in)? - h_node) };
    let dg = |r_out: f64| -> Result<f64> {
        let rho = law.rho_from_coordinate(0.5 * (r_out + r_in))?;
        let a = law.sound_speed(rho);
        let lambda_plus = 0.5 * c * (r_out - r_in) + a;
        if lambda_plus <= 0.0 {
            return Err(Error::Solve("enthalpy boundary left the subsonic branch".into()));
        }
        Ok(0.5 * c * lambda_plus)
    };
    scalar_root(&g, &dg, warm.unwrap_or(r_in), r_in, "enthalpy boundary")
}

/// Safeguarded root find for a map that is strictly increasing on the branch
/// containing `start` (true for both boundary inversions in the subsonic
/// regime): expand a bracket outward, then bisect with Newton acceleration.
fn scalar_root(
    g: &dyn Fn(f64) -> Result<f64>,
    dg: &dyn Fn(f64) -> Result<f64>,
    start: f64,
    r_in: f64,
    what: &str,
) -> Result<f64> {
    let fail = |msg: &str| Error::Solve(format!("{what} inversion (incoming {r_in}): {msg}"));
    // Make sure the starting point evaluates; fall back to r_in (zero
    // node-local velocity, always subsonic).
    let (mut a, mut ga) = match g(start) {
        Ok(v) => (start, v),
        Err(_) => (r_in, g(r_in).map_err(|e| fail(&e.to_string()))?),
    };
    if ga.abs() <= NEWTON_TOL {
        return Ok(a);
    }
    // Expand toward the root; the map increases, so the direction is -sign(g).
    let mut step = 0.125 * (1.0 + r_in.abs());
    let dir = if ga > 0.0 { -1.0 } else { 1.0 };
    let mut b = a;
    let mut gb = ga;
    let mut bracketed = false;
    for _ in 0..200 {
        let trial = b + dir * step;
        match g(trial) {
            Ok(gt) => {
                if gt.signum() != ga.signum() || gt == 0.0 {
                    a = b;
                    ga = gb;
                    b = trial;
                    gb = gt;
                    bracketed = true;
                    break;
                }
                // Monotone map: if moving toward the root stopped making
                // progress the branch ended before a sign change.
                if gt.abs() > gb.abs() + 1e-14 {
                    return Err(fail("no subsonic solution in range"));
                }
                b = trial;
                gb = gt;
                step *= 2.0;
            }
            // Domain edge (vacuum / sonic): shrink the probe.
            Err(_) => step *= 0.5,
        }
        if step < 1e-250 {
            return Err(fail("bracket search collapsed"));
        }
    }
    if !bracketed {
        return Err(fail("could not bracket a subsonic solution"));
    }
    // (a, b) brackets the root. Newton from the midpoint, clipped to the
    // bracket, bisection when Newton misbehaves.
    let mut x = 0.5 * (a + b);
    for _ in 0..200 {
        let gx = match g(x) {
            Ok(v) => v,
            Err(_) => {
                x = 0.5 * (a + b);
                continue;
            }
        };
        if gx.abs() <= NEWTON_TOL {
            return Ok(x);
        }
        if gx.signum() == ga.signum() {
            a = x;
            ga = gx;
        } else {
            b = x;
            gb = gx;
        }
        let newton = match dg(x) {
            Ok(d) if d.abs() > 1e-300 => x - gx / d,
            _ => f64::NAN,
        };
        x = if newton.is_finite() && newton > a.min(b) && newton < a.max(b) {
            newton
        } else {
            0.5 * (a + b)
        };
    }
    let _ = gb;
    Err(fail("root refinement did not converge"))
}

// ---------------------------------------------------------------------------
// Admissibility windows and Lipschitz bounds
// ---------------------------------------------------------------------------

/// Boundary-data windows guaranteeing a unique subsonic inversion with the
/// output bound `|r_out| <= s_max/4 + 3 |r_in|` for all `|r_in| <= s_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryWindows {
    pub s_max: f64,
    pub m_lo: f64,
    pub m_hi: f64,
    pub h_lo: f64,
    pub h_hi: f64,
}

impl BoundaryWindows {
    pub fn admits_m(&self, m_b: f64) -> bool {
        m_b >= self.m_lo && m_b <= self.m_hi
    }

    pub fn admits_h(&self, h_b: f64) -> bool {
        h_b >= self.h_lo && h_b <= self.h_hi
    }
}

/// Compute the admissible boundary-data windows for invariant ball radius
/// `s_max`.
pub fn boundary_windows(law: &PressureLaw, s_max: f64) -> Result<BoundaryWindows> {
    if !(s_max > 0.0) || !s_max.is_finite() {
        return Err(Error::Domain(format!("s_max must be positive, got {s_max}")));
    }
    let c = law.sound_ref();
    let rho_m = law.rho_from_coordinate(-0.125 * s_max)?;
    let rho_p = law.rho_from_coordinate(0.125 * s_max)?;
    let kin = c * c / 8.0 * (0.25 * s_max) * (0.25 * s_max);
    Ok(BoundaryWindows {
        s_max,
        m_lo: rho_m * (-0.125 * c * s_max),
        m_hi: rho_p * (0.125 * c * s_max),
        h_lo: kin + law.dpotential(rho_m),
        h_hi: kin + law.dpotential(rho_p),
    })
}

/// Lipschitz constant of the boundary inversion with respect to the boundary
/// datum: `|r_out(b) - r_out(b')| <= C_b |b - b'|` with
/// `C_b <= max(4/(c rho_lo), 4/(c sqrt(min p')))` over the densities the
/// invariant ball can reach.
pub fn boundary_lipschitz_bound(law: &PressureLaw, s_max: f64) -> Result<f64> {
    let c = law.sound_ref();
    let rho_lo = law.rho_from_coordinate(-s_max)?;
    let rho_hi = law.rho_from_coordinate(s_max)?;
    let dp_lo = law.dpressure(rho_lo).min(law.dpressure(rho_hi));
    Ok((4.0 / (c * rho_lo)).max(4.0 / (c * dp_lo.sqrt())))
}

/// Empirical bound on the node-coupling gain `max |r_out|_inf / |r_in|_inf`
/// over a deterministic tensor sweep of incoming data with `|r_in|_inf <=
/// scale`. Used to size the fixed-point smallness budget on networks.
pub fn estimate_junction_gain(law: &PressureLaw, degree: usize, scale: f64) -> Result<f64> {
    if degree == 0 {
        return Err(Error::Domain("junction gain needs at least one incident edge".into()));
    }
    let levels: &[f64] = if degree <= 5 { &[-1.0, -0.5, 0.0, 0.5, 1.0] } else { &[-1.0, 0.0, 1.0] };
    let mut r_in = vec![0.0; degree];
    let mut idx = vec![0usize; degree];
    let mut worst: f64 = 1.0;
    loop {
        for (i, &k) in idx.iter().enumerate() {
            r_in[i] = levels[k] * scale;
        }
        let norm_in = inf_norm(&r_in);
        if norm_in > 0.0 {
            let r_out = couple_node(law, &r_in, None)?;
            worst = worst.max(inf_norm(&r_out) / norm_in);
        }
        // Advance the mixed-radix counter.
        let mut i = 0;
        loop {
            if i == degree {
                return Ok(worst);
            }
            idx[i] += 1;
            if idx[i] < levels.len() {
                break;
            }
            idx[i] = 0;
            i += 1;
        }
    }
}
