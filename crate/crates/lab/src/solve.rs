//! Single-problem runs behind the `solve` subcommand.

use std::time::Instant;

use lqr_mpi::approx::{
    approximate_midpoint_policy_iteration, approximate_policy_iteration, AmpiConfig, DataMode,
    LstdqEstimator,
};
use lqr_mpi::{
    midpoint_policy_iteration, policy_iteration, Gain, IterateRecord, IterateTrace, ProblemData,
    RolloutConfig, SolveError, SolverConfig,
};
use serde::{Deserialize, Serialize};

use crate::io::matrix_rows;
use crate::metrics::Reference;
use crate::protocols::{Algorithm, ExperimentResult, ProblemMeta};
use crate::real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub algorithm: Algorithm,
    pub tolerance: f64,
    /// Iteration budget (exact) or iteration count (approximate).
    pub max_iterations: usize,
    pub rollout_len: usize,
    pub data_mode: String,
    pub seed: u64,
}

impl SolveOptions {
    pub fn new(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            tolerance: 1e-12,
            max_iterations: if algorithm.is_exact() { 50 } else { 10 },
            rollout_len: 300,
            data_mode: "off".into(),
            seed: 0,
        }
    }

    fn mode(&self) -> DataMode {
        if self.data_mode == "on" {
            DataMode::On
        } else {
            DataMode::Off
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    /// Exact solver met the tolerance, or the approximate solver ran all
    /// its iterations.
    Completed,
    /// The exact solver used its whole budget.
    NonConvergence,
    Failed,
    /// The initial gain was rejected before any iteration.
    InvalidInitialGain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordOut {
    pub iteration: usize,
    pub gain: Vec<Vec<f64>>,
    pub value: Option<Vec<Vec<f64>>>,
    pub q_value: Option<Vec<Vec<f64>>>,
    pub midpoint_gain: Option<Vec<Vec<f64>>>,
    pub step: Option<f64>,
    pub elapsed_secs: Option<f64>,
}

impl RecordOut {
    fn of(r: &IterateRecord) -> Self {
        Self {
            iteration: r.iteration,
            gain: matrix_rows(r.gain.matrix()),
            value: r.value.as_ref().map(|v| matrix_rows(v.matrix())),
            q_value: r.q_value.as_ref().map(|h| matrix_rows(h.matrix())),
            midpoint_gain: r.midpoint_gain.as_ref().map(|l| matrix_rows(l.matrix())),
            step: r.step,
            elapsed_secs: r.elapsed.map(|d| d.as_secs_f64()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub message: Option<String>,
    pub options: SolveOptions,
    pub initial_gain: Vec<Vec<f64>>,
    pub final_gain: Option<Vec<Vec<f64>>>,
    /// `None` when the Riccati equation could not be solved for scoring.
    pub riccati_solution: Option<Vec<Vec<f64>>>,
    /// Errors per record; `+∞` for destabilizing gains. Empty without a
    /// Riccati solution.
    pub result: ExperimentResult,
    pub records: Vec<RecordOut>,
}

impl SolveReport {
    pub fn succeeded(&self) -> bool {
        self.status == SolveStatus::Completed
    }
}

/// Runs one algorithm from `k0`. Never panics on solver failure: whatever
/// trace exists is returned with the status.
pub fn solve(pd: &ProblemData, k0: &Gain, opts: &SolveOptions) -> SolveReport {
    let reference = Reference::new(pd).ok();
    let start = Instant::now();
    let (outcome, config) = if opts.algorithm.is_exact() {
        let cfg = SolverConfig {
            tolerance: opts.tolerance,
            max_iterations: opts.max_iterations,
            record_trace: true,
        };
        let out = match opts.algorithm {
            Algorithm::Pi => policy_iteration(pd, k0, &cfg),
            _ => midpoint_policy_iteration(pd, k0, &cfg),
        };
        (
            out.map(|(k, _, t)| (k, t)),
            serde_json::json!({"tolerance": cfg.tolerance, "max_iterations": cfg.max_iterations}),
        )
    } else {
        let cfg = AmpiConfig {
            iterations: opts.max_iterations,
            rollout: RolloutConfig::standard(pd.n(), opts.rollout_len),
            mode: opts.mode(),
            master_seed: opts.seed,
        };
        let est = LstdqEstimator::new(pd.w().clone());
        let out = match opts.algorithm {
            Algorithm::Api => approximate_policy_iteration(pd, k0, &cfg, &est),
            _ => approximate_midpoint_policy_iteration(pd, k0, &cfg, &est),
        };
        (
            out.map(|(k, _, t)| (k, t)),
            serde_json::json!({
                "iterations": cfg.iterations,
                "rollout_length": cfg.rollout.length,
                "data_mode": opts.data_mode,
                "rcond": est.rcond,
            }),
        )
    };
    let runtime_secs = start.elapsed().as_secs_f64();

    let (status, message, final_gain, trace): (_, _, Option<Gain>, Option<IterateTrace>) =
        match outcome {
            Ok((k, t)) => (SolveStatus::Completed, None, Some(k), Some(t)),
            Err(e) => {
                let status = match e {
                    SolveError::NonConvergence { .. } => SolveStatus::NonConvergence,
                    SolveError::InitialGain(_) => SolveStatus::InvalidInitialGain,
                    _ => SolveStatus::Failed,
                };
                let msg = e.to_string();
                let trace = e.trace().cloned();
                (status, Some(msg), None, trace)
            }
        };
    let records: Vec<RecordOut> = trace
        .iter()
        .flat_map(|t| t.records.iter().map(RecordOut::of))
        .collect();
    let errors = match (&reference, &trace) {
        (Some(r), Some(t)) => t.gains().map(|k| r.relative_error(pd, k)).collect(),
        _ => Vec::new(),
    };
    SolveReport {
        status,
        message: message.clone(),
        options: opts.clone(),
        initial_gain: matrix_rows(k0.matrix()),
        final_gain: final_gain.map(|k| matrix_rows(k.matrix())),
        riccati_solution: reference.as_ref().map(|r| matrix_rows(r.p_star().matrix())),
        result: ExperimentResult {
            problem: ProblemMeta::of(pd, None),
            algorithm: opts.algorithm,
            errors,
            converged: status == SolveStatus::Completed && opts.algorithm.is_exact(),
            rollout_seed: (!opts.algorithm.is_exact()).then_some(opts.seed),
            config,
            runtime_secs,
            failure: if status == SolveStatus::Completed {
                None
            } else {
                message
            },
        },
        records,
    }
}

/// Error of the final record, if scored.
pub fn final_error(report: &SolveReport) -> Option<f64> {
    report.result.errors.last().copied()
}

#[derive(Serialize)]
struct ErrorOnly<'a> {
    #[serde(with = "real::vec")]
    errors: &'a [f64],
}

/// Compact one-line summary of the error curve.
pub fn errors_json(report: &SolveReport) -> String {
    serde_json::to_string(&ErrorOnly {
        errors: &report.result.errors,
    })
    .expect("serializable")
}
