//! Numerical toolkit for a Hamilton-Jacobi equation whose nonlocal resource
//! term acts as a Lagrange multiplier for the constraint `max u = 0`.
//!
//! The crate covers the trait-dependent growth rate, an exact quadratic
//! reduction, a grid solver for the constrained limit, a fixed-point lab
//! for the contraction argument behind well-posedness, and a solver for the
//! parabolic problem at small mutation scale `eps`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fixed_point;
pub mod grid;
pub mod harness;
pub mod hj;
pub mod initial;
pub mod io;
pub mod ode;
pub mod oracle;
pub mod parabolic;
pub mod rate_model;
pub mod root;
pub mod trajectory;
pub mod transport;

pub use error::{Error, ErrorKind, Result};
pub use grid::{argmax_u, GridField, GridSpec, TraitBox};
pub use hj::{solve_limit, step_u, LimitConfig, LimitRun, Scheme};
pub use initial::{InitialData, InitialProfile, Sandwich};
pub use oracle::{hj_residual, integrate_oracle, QuadraticAnsatz, TimeDifferencing};
pub use rate_model::{HypothesisReport, Psi, RateBounds, RateModel};
pub use trajectory::{ProjectionEvent, TrajectoryRecord, TrajectorySample};
