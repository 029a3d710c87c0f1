//! Robust lifetime-ruin minimisation with two high-watermark hedge funds.
//!
//! * [`params`] and [`model`]: parameters, closed-form benchmarks and the
//!   pointwise HJB operators.
//! * [`dynamics`]: Euler simulation of the reflected wealth/distance process
//!   and Monte-Carlo estimation of the robust objective.
//! * [`grid`] and [`solver`]: finite-difference discretisation of the HJB
//!   system and its Howard policy iteration.
//! * [`verify`]: executable checks against the closed-form bounds.
//! * [`config`] and [`io`]: run configuration and artifact formats.

pub mod config;
pub mod dynamics;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod model;
pub mod params;
pub mod solver;
pub mod verify;

pub use model::{Jet, Model, State};
pub use params::{AmbiguitySet, ControlSet, DerivedParams, MarketParams, ParamError};
