use alloc::string::String;

use crate::exact::IterateTrace;

/// Failures of the numerical kernels and operators.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not Schur stable (spectral radius {spectral_radius})")]
    Unstable { spectral_radius: f64 },
    #[error("input-input block is singular (min |eigenvalue| {min_abs_eigenvalue:e})")]
    SingularBlock { min_abs_eigenvalue: f64 },
    #[error("numerical failure: {0}")]
    Numerical(&'static str),
    #[error("value iteration diverged (Frobenius norm {norm:e})")]
    Infeasible { norm: f64 },
    #[error("need at least 3 usable error samples, got {0}")]
    InsufficientData(usize),
    #[error("state norm {norm:e} exceeded bound at step {step}")]
    SimulationDivergence { step: usize, norm: f64 },
    #[error("degenerate data: {0}")]
    DegenerateData(&'static str),
}

/// A solver run that stopped early. Every variant past the initial-gain
/// check carries the partial trace collected so far.
#[derive(Debug, Clone, thiserror::Error)]
pub enum SolveError {
    #[error("initial gain rejected: {0}")]
    InitialGain(#[source] Error),
    #[error("midpoint gain at iteration {iteration} is not stabilizing (spectral radius {spectral_radius})")]
    MidpointUnstable {
        iteration: usize,
        spectral_radius: f64,
        trace: IterateTrace,
    },
    #[error("no convergence within {max_iterations} iterations")]
    NonConvergence {
        max_iterations: usize,
        trace: IterateTrace,
    },
    #[error("iterates diverged at iteration {iteration} (Frobenius norm {norm:e})")]
    Divergence {
        iteration: usize,
        norm: f64,
        trace: IterateTrace,
    },
    #[error("value estimation failed at iteration {iteration}: {source}")]
    Estimation {
        iteration: usize,
        source: Error,
        trace: IterateTrace,
    },
    #[error("rollout failed at iteration {iteration}: {source}")]
    Rollout {
        iteration: usize,
        source: Error,
        trace: IterateTrace,
    },
    #[error("iteration {iteration} failed: {source}")]
    Step {
        iteration: usize,
        source: Error,
        trace: IterateTrace,
    },
}

impl SolveError {
    /// Partial trace, if the failure happened after initialization.
    pub fn trace(&self) -> Option<&IterateTrace> {
        match self {
            SolveError::InitialGain(_) => None,
            SolveError::MidpointUnstable { trace, .. }
            | SolveError::NonConvergence { trace, .. }
            | SolveError::Divergence { trace, .. }
            | SolveError::Estimation { trace, .. }
            | SolveError::Rollout { trace, .. }
            | SolveError::Step { trace, .. } => Some(trace),
        }
    }
}
