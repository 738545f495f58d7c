//! Doubly nonnegative relaxations of mixed-binary quadratic programs solved
//! by a low-rank Riemannian augmented Lagrangian method.
//!
//! The relaxation of
//!
//! ```text
//!   min xᵀQx + 2cᵀx   s.t.  Ax = b, x ≥ 0, x_B binary, x_i x_j = 0 on E
//! ```
//!
//! is an SDP over `Y = [1 xᵀ; x X] ⪰ 0` intersected with a polyhedral cone.
//! The solver keeps the affine and binary constraints exact by factorizing
//! `Y = R̂ R̂ᵀ` with `R̂ = [e₁ᵀ; R]` and optimizing `R` over the smooth set
//! `{A R = b e₁ᵀ, diag_B(R Rᵀ) = R_B e₁}`, while the polyhedral cone is
//! handled by an augmented Lagrangian penalty.
//!
//! Modules:
//! * [`linops`] — cached factorization of `A Aᵀ` and the projector `J_A`;
//! * [`problem`] — instances, lifting, slack reformulation, generators, parsers;
//! * [`cones`] — projections onto the polyhedral cone and its dual;
//! * [`variety`] — tangent projection, retraction, feasible initialization;
//! * [`subsolver`] — subproblem objective/gradient and Riemannian gradient descent;
//! * [`duals`] — certificate recovery, saddle escape and rank adaptation;
//! * [`alm`] — the outer loop and KKT residues;
//! * [`oracle`] — dense reference solvers for verification.

pub mod alm;
pub mod cones;
pub mod duals;
pub mod error;
pub mod linops;
pub mod oracle;
pub mod problem;
pub mod subsolver;
pub mod variety;

pub use alm::{solve, solve_with_observer, IterationRecord, Residues, SlackMode, SolveReport, SolveStatus, SolverOptions};
pub use error::{Result, RnnalError};
pub use problem::{add_slacks, build_dnn, DnnModel, MbqpProblem};
