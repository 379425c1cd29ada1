//! Adaptive probabilistic ODE solvers whose memory is set by the target grid
//! rather than by the adaptive compute grid.
//!
//! The solver tracks a Gauss–Markov state stack `[u, u′, …, u^(L)]` under an
//! integrated-Wiener-process prior, conditions on the ODE residual at every
//! compute point, and merges the backward conditionals of accepted steps in
//! place so that only one conditional per target interval is ever stored.
//!
//! ```no_run
//! use probode::{problems, solve_targets, equispaced_targets};
//!
//! let bp = problems::rigid_body();
//! let targets = equispaced_targets(&bp.problem, 5);
//! let sol = solve_targets(&bp.problem, &targets, &bp.config()).unwrap();
//! let means = sol.u_means().unwrap();
//! assert_eq!(means.len(), 6);
//! ```

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod fixedpoint;
pub mod gaussian;
pub mod harness;
pub mod jet;
pub mod linearize;
pub mod oracle;
pub mod prior;
pub mod problem;
pub mod problems;
pub mod rk;
pub mod stepping;

pub use error::{Error, Result};
pub use fixedpoint::{
    equispaced_targets, solve_targets, solve_targets_with, solve_two_targets, FixedPointCarry,
    TargetSolution,
};
pub use gaussian::{
    condition_affine, marginalize, merge_conditionals, qr_sqrt_sum, sample, AffineConditional,
    GaussianState,
};
pub use jet::{Jet, Real};
pub use linearize::{linearize, linearize_ek0, linearize_ek1, Linearization, ResidualModel};
pub use prior::{iwp_transition, precondition, taylor_init, Factorization, StateStack, TransitionModel};
pub use problem::{Jacobian, OdeProblem, VectorField};
pub use problems::BenchmarkProblem;
pub use stepping::{
    pi_control, predict, Calibration, ControllerConfig, SolveStats, Solver, SolverConfig,
    StepOutcome,
};
