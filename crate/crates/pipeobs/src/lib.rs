//! Simulation of 1D barotropic gas flow on pipe networks, twinned with a
//! Luenberger-style boundary observer.
//!
//! The crate models isentropic/isothermal Euler flow (density `rho`, velocity
//! `v`, mass flux `m = rho v`) on a network of pipes coupled at nodes by mass
//! conservation and enthalpy continuity. A second copy of the dynamics (the
//! observer) is driven by the same boundary data plus an internal nudging term
//! built from one of three measurement modes: velocity, density, or mass flux.
//!
//! Modules, bottom up:
//! - [`netmodel`]: pressure laws, network topology, scenario configuration.
//! - [`riemann`]: characteristic (Riemann-invariant) form of the flow.
//! - [`junction`]: node coupling solves and boundary-condition inversion.
//! - [`observer`]: nudging source terms in physical and characteristic form.
//! - [`solver`]: method-of-characteristics and finite-volume twin steppers.
//! - [`energy`]: relative energy, auxiliary functionals, decay-rate fitting,
//!   and the run-time assumption audit.
//! - [`picard`]: a fixed-point (Picard) construction of solutions on short
//!   certified horizons, used to cross-check the steppers.

pub mod energy;
mod error;
pub mod junction;
pub mod netmodel;
pub mod observer;
pub mod picard;
pub mod riemann;
pub mod solver;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
