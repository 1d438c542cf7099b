//! Characteristic (Riemann-invariant) form of the barotropic flow.
//!
//! With the density coordinate `w(rho)` (see
//! [`PressureLaw::rho_coordinate`]) and the reference sound speed `c`, the
//! invariants are
//!
//! ```text
//! s_plus  = w(rho) + v / c        s_minus = w(rho) - v / c
//! ```
//!
//! They advect along the eigenvalues `lambda± = v ± sqrt(p'(rho))` and pick
//! up the friction source. All conversions here are exact inverses of each
//! other up to the law's coordinate inversion.

use crate::netmodel::PressureLaw;
use crate::{Error, Result};

/// Convert a physical state to invariants. Errors on non-positive density.
pub fn to_riemann(law: &PressureLaw, rho: f64, v: f64) -> Result<(f64, f64)> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::Domain(format!("density must be positive and finite, got {rho}")));
    }
    if !v.is_finite() {
        return Err(Error::Domain(format!("velocity must be finite, got {v}")));
    }
    let w = law.rho_coordinate(rho);
    let c = law.sound_ref();
    Ok((w + v / c, w - v / c))
}

/// Convert invariants back to the physical state `(rho, v)`.
pub fn from_riemann(law: &PressureLaw, s_plus: f64, s_minus: f64) -> Result<(f64, f64)> {
    let rho = law.rho_from_coordinate(0.5 * (s_plus + s_minus))?;
    let v = 0.5 * law.sound_ref() * (s_plus - s_minus);
    Ok((rho, v))
}

/// Characteristic speeds `(lambda_plus, lambda_minus) = v ± sqrt(p'(rho))`.
pub fn eigenvalues(law: &PressureLaw, rho: f64, v: f64) -> (f64, f64) {
    let a = law.sound_speed(rho);
    (v + a, v - a)
}

/// Total specific enthalpy `h = v^2/2 + P'(rho)`, the quantity that is
/// continuous across junctions.
pub fn enthalpy(law: &PressureLaw, rho: f64, v: f64) -> f64 {
    0.5 * v * v + law.dpotential(rho)
}

/// Enthalpy evaluated directly from invariants:
/// `h = c^2/8 (s_plus - s_minus)^2 + P'(rho(s))`.
pub fn enthalpy_from_riemann(law: &PressureLaw, s_plus: f64, s_minus: f64) -> Result<f64> {
    let c = law.sound_ref();
    let d = s_plus - s_minus;
    let rho = law.rho_from_coordinate(0.5 * (s_plus + s_minus))?;
    Ok(c * c / 8.0 * d * d + law.dpotential(rho))
}

/// Friction source in invariant form:
/// `sigma = gamma c/4 |s_plus - s_minus| (s_plus - s_minus) = gamma/c |v| v`.
/// It enters the plus family with a minus sign and the minus family with a
/// plus sign.
pub fn friction_sigma(law: &PressureLaw, gamma: f64, s_plus: f64, s_minus: f64) -> f64 {
    let c = law.sound_ref();
    let d = s_plus - s_minus;
    gamma * 0.25 * c * d.abs() * d
}

/// Uniform bounds on the characteristic speeds over the invariant ball
/// `|s±| <= s_max`, together with a Lipschitz constant of `lambda±` with
/// respect to the sum metric `|d s_plus| + |d s_minus|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenBounds {
    /// `lambda_plus >= lambda_lo > 0` (and symmetrically `lambda_minus <= -lambda_lo`).
    pub lambda_lo: f64,
    /// `lambda_plus <= lambda_hi` (and `|lambda_minus| <= lambda_hi`).
    pub lambda_hi: f64,
    /// Lipschitz constant of each eigenvalue in the invariants.
    pub lipschitz: f64,
    /// Density range reached by the ball.
    pub rho_ball_lo: f64,
    pub rho_ball_hi: f64,
    /// The ball radius these bounds were computed for.
    pub s_max: f64,
}

/// Compute [`EigenBounds`] for the invariant ball `|s±| <= s_max`.
///
/// Requires the subsonic smallness condition
/// `c s_max <= sqrt(min p') / 2` over the densities the ball can reach;
/// errors with [`Error::Budget`] otherwise. Under it:
/// `lambda_lo = sqrt(min p')/2`, `lambda_hi = 3 sqrt(max p')/2`.
pub fn eigen_bounds(law: &PressureLaw, s_max: f64) -> Result<EigenBounds> {
    if !(s_max > 0.0) || !s_max.is_finite() {
        return Err(Error::Domain(format!("s_max must be positive, got {s_max}")));
    }
    let c = law.sound_ref();
    // |w(rho)| <= |s+|/2 + |s-|/2 <= s_max, so densities stay in this range.
    let rho_lo = law.rho_from_coordinate(-s_max)?;
    let rho_hi = law.rho_from_coordinate(s_max)?;
    // p' monotone in rho for both laws: extremes at the endpoints.
    let dp_lo = law.dpressure(rho_lo).min(law.dpressure(rho_hi));
    let dp_hi = law.dpressure(rho_lo).max(law.dpressure(rho_hi));
    if c * s_max > 0.5 * dp_lo.sqrt() {
        return Err(Error::Budget(format!(
            "subsonic smallness violated: c s_max = {} exceeds sqrt(min p')/2 = {}",
            c * s_max,
            0.5 * dp_lo.sqrt()
        )));
    }
    // |v| <= c s_max <= sqrt(dp_lo)/2 gives the speed window; the Lipschitz
    // constant combines dv/ds = c/2 with d sqrt(p')/ds = c rho p'' / (4 p').
    let dpp_hi = law.d2pressure(rho_lo).abs().max(law.d2pressure(rho_hi).abs());
    Ok(EigenBounds {
        lambda_lo: 0.5 * dp_lo.sqrt(),
        lambda_hi: 1.5 * dp_hi.sqrt(),
        lipschitz: 0.5 * c + c * rho_hi * dpp_hi / (4.0 * dp_lo),
        rho_ball_lo: rho_lo,
        rho_ball_hi: rho_hi,
        s_max,
    })
}

/// Friction bounds over the invariant ball: `|sigma| <= gamma c s_max^2` and
/// `sigma` is Lipschitz in the sum metric with constant `gamma c s_max`.
pub fn sigma_bounds(law: &PressureLaw, gamma: f64, s_max: f64) -> (f64, f64) {
    let c = law.sound_ref();
    (gamma * c * s_max * s_max, gamma * c * s_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::adaptive_simpson;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn iso() -> PressureLaw {
        PressureLaw::isothermal(1.0, 1.0).unwrap()
    }

    fn pow2() -> PressureLaw {
        PressureLaw::power(1.0, 2.0, 1.0).unwrap()
    }

    #[test]
    fn reference_state_maps_to_zero() {
        for law in [iso(), pow2()] {
            let (sp, sm) = to_riemann(&law, law.rho_ref(), 0.0).unwrap();
            assert_eq!(sp, 0.0);
            assert_eq!(sm, 0.0);
        }
    }

    #[test]
    fn known_conversion_values() {
        // Isothermal c=1: rho = e gives coordinate 1, so (e, 0.5) -> (1.5, 0.5).
        let law = iso();
        let (sp, sm) = to_riemann(&law, std::f64::consts::E, 0.5).unwrap();
        assert!((sp - 1.5).abs() < 1e-12);
        assert!((sm - 0.5).abs() < 1e-12);
        let (rho, v) = from_riemann(&law, 1.5, 0.5).unwrap();
        assert!((rho - std::f64::consts::E).abs() < 1e-12);
        assert!((v - 0.5).abs() < 1e-12);
        // Equal invariants mean zero velocity.
        let (_, v) = from_riemann(&law, 0.7, 0.7).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for law in [iso(), pow2(), PressureLaw::power(0.7, 1.4, 1.3).unwrap()] {
            for _ in 0..300 {
                let rho = rng.random_range(0.1..5.0);
                let v = rng.random_range(-2.0..2.0);
                let (sp, sm) = to_riemann(&law, rho, v).unwrap();
                let (rho2, v2) = from_riemann(&law, sp, sm).unwrap();
                assert!((rho2 - rho).abs() <= 1e-10 * rho.max(1.0));
                assert!((v2 - v).abs() <= 1e-10 * v.abs().max(1.0));
                let (sp2, sm2) = to_riemann(&law, rho2, v2).unwrap();
                assert!((sp2 - sp).abs() <= 1e-10);
                assert!((sm2 - sm).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn eigenvalue_values() {
        let law = iso();
        let (lp, lm) = eigenvalues(&law, 1.0, 0.1);
        assert!((lp - 1.1).abs() < 1e-15);
        assert!((lm + 0.9).abs() < 1e-15);
        let (lp, lm) = eigenvalues(&law, 1.0, 0.0);
        assert_eq!(lp, 1.0);
        assert_eq!(lm, -1.0);
        // Power law: sound speed depends on density, p'(2) = 4.
        let law = pow2();
        let (lp, lm) = eigenvalues(&law, 2.0, 0.0);
        assert!((lp - 2.0).abs() < 1e-15);
        assert_eq!(lp, -lm);
    }

    #[test]
    fn enthalpy_values_and_integral_oracle() {
        let law = iso();
        assert!((enthalpy(&law, 1.0, 0.0) - 1.0).abs() < 1e-15);
        // Frozen: rho = e, v = 1, c = 1: h = 1/2 + (1 + ln e) = 2.5.
        assert!((enthalpy(&law, std::f64::consts::E, 1.0) - 2.5).abs() < 1e-12);

        // Oracle: P'(rho) - P'(rho_ref) integrates P'' (adaptive Simpson),
        // an independent route to the enthalpy's pressure part.
        for law in [iso(), pow2()] {
            for rho in [0.4, 1.0, 2.7] {
                let oracle = law.dpotential(law.rho_ref()) + adaptive_simpson(&|s| law.d2potential(s), law.rho_ref(), rho, 1e-13, 48);
                assert!((oracle - law.dpotential(rho)).abs() < 1e-10, "law {law:?} rho {rho}");
            }
        }

        // Invariant-space evaluation agrees with the physical one.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for law in [iso(), pow2()] {
            for _ in 0..200 {
                let rho = rng.random_range(0.2..3.0);
                let v = rng.random_range(-1.0..1.0);
                let (sp, sm) = to_riemann(&law, rho, v).unwrap();
                let h1 = enthalpy(&law, rho, v);
                let h2 = enthalpy_from_riemann(&law, sp, sm).unwrap();
                assert!((h1 - h2).abs() <= 1e-12 * h1.abs().max(1.0));
            }
        }
    }

    #[test]
    fn friction_identities() {
        let law = iso();
        assert_eq!(friction_sigma(&law, 0.0, 0.4, -0.2), 0.0);
        assert_eq!(friction_sigma(&law, 1.0, 0.3, 0.3), 0.0);
        // Odd under velocity reversal (swapping the invariants).
        let s = friction_sigma(&law, 0.7, 0.5, -0.1);
        assert_eq!(friction_sigma(&law, 0.7, -0.1, 0.5), -s);

        // sigma == gamma/c |v| v in physical variables.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for law in [iso(), pow2()] {
            let c = law.sound_ref();
            for _ in 0..300 {
                let sp = rng.random_range(-0.8..0.8);
                let sm = rng.random_range(-0.8..0.8);
                let gamma = rng.random_range(0.0..2.0);
                let (_, v) = from_riemann(&law, sp, sm).unwrap();
                let direct = gamma / c * v.abs() * v;
                let sigma = friction_sigma(&law, gamma, sp, sm);
                assert!((sigma - direct).abs() <= 1e-12 * direct.abs().max(1.0));
            }
        }
    }

    #[test]
    fn eigen_bounds_isothermal_values() {
        // Isothermal: p' = c^2 everywhere, p'' = 0, so the window is
        // [c/2, 3c/2] and the Lipschitz constant is c/2.
        let b = eigen_bounds(&iso(), 0.3).unwrap();
        assert_eq!(b.lambda_lo, 0.5);
        assert_eq!(b.lambda_hi, 1.5);
        assert_eq!(b.lipschitz, 0.5);
        // Smallness violation: c s_max > 1/2.
        assert!(matches!(eigen_bounds(&iso(), 0.6), Err(Error::Budget(_))));
    }

    #[test]
    fn eigen_bounds_hold_on_sampled_ball() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for law in [iso(), pow2(), PressureLaw::power(0.7, 1.4, 1.3).unwrap()] {
            let s_max = 0.15;
            let b = eigen_bounds(&law, s_max).unwrap();
            for _ in 0..1000 {
                let sp = rng.random_range(-s_max..s_max);
                let sm = rng.random_range(-s_max..s_max);
                let (rho, v) = from_riemann(&law, sp, sm).unwrap();
                let (lp, lm) = eigenvalues(&law, rho, v);
                assert!(lp >= b.lambda_lo - 1e-12 && lp <= b.lambda_hi + 1e-12, "{law:?} lp {lp}");
                assert!(lm <= -b.lambda_lo + 1e-12 && lm >= -b.lambda_hi - 1e-12, "{law:?} lm {lm}");
                assert!(rho >= b.rho_ball_lo - 1e-12 && rho <= b.rho_ball_hi + 1e-12);
            }
        }
    }

    #[test]
    fn eigen_lipschitz_holds_on_sampled_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for law in [iso(), pow2()] {
            let s_max = 0.15;
            let b = eigen_bounds(&law, s_max).unwrap();
            for _ in 0..1000 {
                let a = (rng.random_range(-s_max..s_max), rng.random_range(-s_max..s_max));
                let d = (rng.random_range(-s_max..s_max), rng.random_range(-s_max..s_max));
                let (rho_a, v_a) = from_riemann(&law, a.0, a.1).unwrap();
                let (rho_d, v_d) = from_riemann(&law, d.0, d.1).unwrap();
                let dist = (a.0 - d.0).abs() + (a.1 - d.1).abs();
                let (lpa, lma) = eigenvalues(&law, rho_a, v_a);
                let (lpd, lmd) = eigenvalues(&law, rho_d, v_d);
                assert!((lpa - lpd).abs() <= b.lipschitz * dist + 1e-12);
                assert!((lma - lmd).abs() <= b.lipschitz * dist + 1e-12);
            }
        }
    }

    #[test]
    fn sigma_bounds_hold_on_sampled_ball() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for law in [iso(), pow2()] {
            let s_max = 0.2;
            let gamma = 1.3;
            let (sig_max, sig_lip) = sigma_bounds(&law, gamma, s_max);
            for _ in 0..1000 {
                let a = (rng.random_range(-s_max..s_max), rng.random_range(-s_max..s_max));
                let d = (rng.random_range(-s_max..s_max), rng.random_range(-s_max..s_max));
                let sa = friction_sigma(&law, gamma, a.0, a.1);
                let sd = friction_sigma(&law, gamma, d.0, d.1);
                assert!(sa.abs() <= sig_max + 1e-12);
                let dist = (a.0 - d.0).abs() + (a.1 - d.1).abs();
                assert!((sa - sd).abs() <= sig_lip * dist + 1e-12);
            }
        }
    }
}
