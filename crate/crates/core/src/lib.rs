//! Solver library for optimistic bilevel programs with a smooth, convex
//! lower level.
//!
//! The lower-level optimum is treated as an implicit function of the upper
//! variables. Its derivatives are obtained from the lower-level KKT
//! sensitivity system rather than by unrolling solver iterations, and the
//! resulting implicit single-level problem is driven by an augmented
//! Lagrangian outer loop with a projected quasi-Newton inner solver.
//!
//! # Example
//!
//! The follower tracks the leader inside a box, `y(x) = clamp(x, -1, 1)`;
//! the leader steers the pair toward `(2, 1)`:
//!
//! ```
//! use bilevel_core::alm::run;
//! use bilevel_core::{AlmConfig, BilevelProblem};
//!
//! let p = BilevelProblem::builder(1, 1)
//!     .upper_objective(|x, y| (x[0] - 2.0).powi(2) + (y[0] - 1.0).powi(2))
//!     .lower_objective(|x, y| 0.5 * y[0] * y[0] - x[0] * y[0])
//!     .y_bounds(vec![(-1.0, 1.0)])
//!     .build()?;
//!
//! let report = run(&p, &[0.0], &AlmConfig::default(), "tracking")?;
//! assert!(report.termination.is_success());
//! assert!(report.upper_objective.abs() < 1e-6);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```
//!
//! Module map:
//! - [`autodiff`]: forward-mode jets carrying value, gradient and Hessian.
//! - [`linalg`]: small dense matrices, LU factorization, condition estimate.
//! - [`problem`]: problem container, validation, bound conversion,
//!   regularization of linear lower objectives.
//! - [`lower_solver`]: primal-dual interior-point solver for the lower level.
//! - [`sensitivity`]: KKT sensitivity system and total derivatives.
//! - [`inner_solver`]: projected L-BFGS with a weak Wolfe line search.
//! - [`alm`]: the augmented Lagrangian outer loop, traces and multistart.
//! - [`stationarity`]: S-stationarity certificate via the adjoint system.
//! - [`benchmarks`]: registry of literature test problems.
//! - [`scan`]: one-dimensional landscape scans of the implicit objective.

// Guards written as `!(x > tol)` deliberately treat NaN as a failure.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alm;
pub mod autodiff;
pub mod benchmarks;
pub mod inner_solver;
pub mod linalg;
pub mod lower_solver;
mod par;
pub mod problem;
pub mod scan;
pub mod sensitivity;
pub mod stationarity;

pub use alm::{AlmConfig, SolveReport, Termination};
pub use problem::BilevelProblem;
