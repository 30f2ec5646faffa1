//! Solvers and diagnostics for the degenerate elliptic equation
//! min(-Laplace(u) - r, |Du| - 1) = 0 with Dirichlet data on simple domains.
//!
//! The equation is the value function of a two-player game: one player picks
//! between a Brownian step and unit-speed motion, the other picks the motion
//! direction, and the value is the expected exit time (with the Brownian
//! clock running at rate r). The gradient is bounded *below* by 1, which
//! makes the problem non-convex; solutions are Lipschitz but no better, and
//! |Du| stays continuous across the free boundary between the two regimes.
//!
//! Modules:
//! * [`grid`] - uniform lattices, node classification, stencils, interpolation.
//! * [`radial`] - piecewise closed-form radial solutions and a 1-D radial
//!   ODE solver used as an independent reference.
//! * [`solver`] - the monotone sweeping scheme, the epsilon-regularized
//!   fixed-point scheme and the dynamic-programming value iteration.
//! * [`free_boundary`] - region classification, interface extraction and
//!   gradient-continuity diagnostics.
//! * [`validation`] - convergence, regularization, comparison, growth and
//!   Lipschitz studies with machine-readable reports.
//! * [`cli`] - the `hjb` command-line front end.

pub mod cli;
pub mod error;
pub mod free_boundary;
pub mod grid;
pub mod radial;
pub mod solver;
pub mod validation;

pub use error::{Error, Result};
