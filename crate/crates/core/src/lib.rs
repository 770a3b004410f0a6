//! Exact and approximate (model-free) midpoint policy iteration for
//! discrete-time linear quadratic regulation.
//!
//! The crate is `no_std` with `alloc`. The optional `std` feature (on by
//! default) only adds wall-clock timing to solver traces.
//!
//! Layout:
//! - [`kernel`]: svec/smat, spectral radius, discrete Lyapunov solver, pseudoinverse.
//! - [`operators`]: problem data and the gain, Riccati, state-action value operators.
//! - [`exact`]: policy evaluation, policy iteration, midpoint policy iteration, ARE solve.
//! - [`simulation`]: seeded rollouts of the stochastic linear system.
//! - [`lstdq`]: least-squares temporal difference estimation of state-action value matrices.
//! - [`approx`]: model-free policy iteration and midpoint policy iteration.
#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(any(feature = "std", test))]
extern crate std;

pub mod approx;
pub mod error;
pub mod exact;
pub mod kernel;
pub mod lstdq;
pub mod operators;
pub mod simulation;

pub use approx::{
    approximate_midpoint_policy_iteration, approximate_policy_iteration, midpoint_q_penalty,
    AmpiConfig, DataMode, ExactOracle, LstdqEstimator, ValueEstimator,
};
pub use error::{Error, SolveError};
pub use exact::{
    convergence_order, midpoint_policy_iteration, policy_evaluation, policy_iteration, solve_are,
    IterateRecord, IterateTrace, SolverConfig,
};
pub use operators::{Gain, ProblemData, StateActionValue, ValueMatrix};
pub use simulation::{Rollout, RolloutConfig, RolloutSeed};

/// Dense column-major matrix used throughout the crate.
pub type Matrix = nalgebra::DMatrix<f64>;
/// Dense column vector.
pub type Vector = nalgebra::DVector<f64>;
