//! Library half of the command-line front end, split out so the
//! serialization formats and command plumbing are unit-testable.

pub mod canon;
pub mod commands;
pub mod plot;
pub mod series;
