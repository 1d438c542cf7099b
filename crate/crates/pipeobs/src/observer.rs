//! Observer nudging terms.
//!
//! The observer runs the same dynamics as the truth system plus an internal
//! forcing that pulls it toward the measured quantity. In physical variables
//! the forcing is a pair `(l_rho, l_v)` entering the density and velocity
//! equations; in characteristic variables it is a pair of sources on the
//! invariants.
//!
//! Modes:
//! - velocity: `l_v = mu (v - v_hat)`.
//! - density: `l_rho = mu c / sqrt(p'(rho_hat)) * rho_hat *
//!   (w(rho) - w(rho_hat))` with `w` the density coordinate; this is the
//!   form whose invariant projection is exactly `mu (w - w_hat)` on both
//!   families.
//! - massflow: `l_v = mu (m - m_hat)`. The invariant sources are the
//!   left-eigenvector projection `± l_v / c` (projection convention: the
//!   forcing acts on the velocity equation alone, like the velocity mode,
//!   but with the mass-flux mismatch as gain).

use crate::netmodel::{MeasurementMode, PressureLaw};
use crate::riemann::from_riemann;
use crate::{Error, Result};

/// Nudging forcing in physical variables.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NudgingPhysical {
    /// Source in the mass equation (`d rho_hat/dt += l_rho`).
    pub l_rho: f64,
    /// Source in the velocity equation (`d v_hat/dt += l_v`).
    pub l_v: f64,
}

/// Evaluate the physical nudging pair at one point.
pub fn nudging_physical(
    law: &PressureLaw,
    mode: MeasurementMode,
    mu: f64,
    truth: (f64, f64),
    obs: (f64, f64),
) -> Result<NudgingPhysical> {
    check_mu(mu)?;
    let (rho, v) = truth;
    let (rho_hat, v_hat) = obs;
    if !(rho > 0.0) || !(rho_hat > 0.0) {
        return Err(Error::Domain(format!("nudging needs positive densities, got {rho} and {rho_hat}")));
    }
    Ok(match mode {
        MeasurementMode::None => NudgingPhysical::default(),
        MeasurementMode::Velocity => NudgingPhysical { l_rho: 0.0, l_v: mu * (v - v_hat) },
        MeasurementMode::Density => {
            let c = law.sound_ref();
            let w_gap = law.rho_coordinate(rho) - law.rho_coordinate(rho_hat);
            NudgingPhysical { l_rho: mu * c / law.sound_speed(rho_hat) * rho_hat * w_gap, l_v: 0.0 }
        }
        MeasurementMode::MassFlux => NudgingPhysical { l_rho: 0.0, l_v: mu * (rho * v - rho_hat * v_hat) },
    })
}

/// Evaluate the nudging sources on the observer invariants
/// `(source_plus, source_minus)`, given the truth invariants `truth_r` and
/// observer invariants `obs_s` at the same point.
pub fn nudging_riemann(
    law: &PressureLaw,
    mode: MeasurementMode,
    mu: f64,
    truth_r: (f64, f64),
    obs_s: (f64, f64),
) -> Result<(f64, f64)> {
    check_mu(mu)?;
    let (r_plus, r_minus) = truth_r;
    let (s_plus, s_minus) = obs_s;
    Ok(match mode {
        MeasurementMode::None => (0.0, 0.0),
        MeasurementMode::Velocity => {
            let gap = 0.5 * mu * ((r_plus - r_minus) - (s_plus - s_minus));
            (gap, -gap)
        }
        MeasurementMode::Density => {
            let gap = 0.5 * mu * ((r_plus + r_minus) - (s_plus + s_minus));
            (gap, gap)
        }
        MeasurementMode::MassFlux => {
            let (rho, v) = from_riemann(law, r_plus, r_minus)?;
            let (rho_hat, v_hat) = from_riemann(law, s_plus, s_minus)?;
            let l_v = mu * (rho * v - rho_hat * v_hat);
            let c = law.sound_ref();
            (l_v / c, -l_v / c)
        }
    })
}

/// Whether a mode's invariant source contains the exact linear part
/// `-(mu/2) s±` that the solver removes with an integrating factor.
pub fn has_integrating_factor(mode: MeasurementMode) -> bool {
    matches!(mode, MeasurementMode::Velocity | MeasurementMode::Density)
}

/// The explicit remainder `b± = source± + (mu/2) s±` of the invariant
/// nudging after the integrating-factor part is removed. Only meaningful for
/// modes where [`has_integrating_factor`] is true; for the others this is
/// the full source.
pub fn nudging_remainder(
    law: &PressureLaw,
    mode: MeasurementMode,
    mu: f64,
    truth_r: (f64, f64),
    obs_s: (f64, f64),
) -> Result<(f64, f64)> {
    let (r_plus, r_minus) = truth_r;
    let (s_plus, s_minus) = obs_s;
    check_mu(mu)?;
    Ok(match mode {
        MeasurementMode::Velocity => (
            0.5 * mu * (r_plus - r_minus + s_minus),
            -0.5 * mu * (r_plus - r_minus - s_plus),
        ),
        MeasurementMode::Density => (
            0.5 * mu * (r_plus + r_minus - s_minus),
            0.5 * mu * (r_plus + r_minus - s_plus),
        ),
        _ => nudging_riemann(law, mode, mu, truth_r, obs_s)?,
    })
}

fn check_mu(mu: f64) -> Result<()> {
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(Error::Domain(format!("observer gain mu must be >= 0, got {mu}")));
    }
    Ok(())
}
