//! Simulation and diagnostics for stochastic differential equations with
//! singular drift and multiplicative noise on space-time domains.
//!
//! Paths live in the one-point compactification `Q ∪ {∂}`: they are killed the
//! first time `(s + t, X_t)` leaves the open domain `Q` and stay at the
//! cemetery afterwards.

pub mod coeffs;
pub mod domain;
pub mod error;
pub mod estimators;
pub mod grid;
pub mod integrate;
pub mod lyapunov;
pub mod models;
pub mod point;
pub mod rng;
pub mod stats;

pub use error::{Result, SdeError};
pub use point::{CompactifiedState, SpaceTimePoint};
