//! Finite-difference laboratory for multi-species logistic competition
//! with unequal diffusion rates on an interval with no-flux boundaries.
//!
//! The model: `n` species densities `u_i(x, t)` obeying
//!
//! ```text
//! du_i/dt = d_i u_i'' + u_i (m(x) - sum_j u_j)      on (0, L),
//! u_i'(0) = u_i'(L) = 0,
//! ```
//!
//! all sharing one habitat profile `m` and one logistic interaction, and
//! differing only in the diffusion rate `d_i`. The crate provides the
//! spatial discretization ([`grid`]), an expression language for scenario
//! files ([`expr`]), principal eigenvalue machinery for the linearization
//! at single-species steady states ([`eigen`]), the nonlinear integrator
//! and steady-state solver ([`dynamics`]), a normalized tracker for the
//! leading mode of time-dependent linearizations ([`bundle`]), and the
//! prepackaged numerical experiments the CLI exposes ([`experiments`]).

pub mod bundle;
pub mod dynamics;
pub mod eigen;
pub mod error;
pub mod experiments;
pub mod expr;
pub mod grid;
pub mod tridiag;

pub use error::{Error, Result};
pub use grid::{dirichlet_energy, integrate, norm, Field, Grid, Norm};
