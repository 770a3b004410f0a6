//! Experiment protocols: the inertial-mass comparison and the random-instance
//! Monte Carlo sweep.

use std::fmt;
use std::time::Instant;

use lqr_mpi::approx::{
    approximate_midpoint_policy_iteration, approximate_policy_iteration, AmpiConfig, DataMode,
    LstdqEstimator,
};
use lqr_mpi::kernel::spectral_radius;
use lqr_mpi::{
    midpoint_policy_iteration, policy_iteration, Error, Gain, IterateTrace, ProblemData,
    RolloutConfig, SolveError, SolverConfig,
};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::metrics::Reference;
use crate::problems::{mass_k0, mass_problem, perturbed_initial_gain, random_problem, MassParams};
use crate::real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "PI")]
    Pi,
    #[serde(rename = "MPI")]
    Mpi,
    #[serde(rename = "API")]
    Api,
    #[serde(rename = "AMPI")]
    Ampi,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Pi,
        Algorithm::Mpi,
        Algorithm::Api,
        Algorithm::Ampi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Pi => "PI",
            Algorithm::Mpi => "MPI",
            Algorithm::Api => "API",
            Algorithm::Ampi => "AMPI",
        }
    }

    pub fn is_exact(self) -> bool {
        matches!(self, Algorithm::Pi | Algorithm::Mpi)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemMeta {
    pub n: usize,
    pub m: usize,
    pub rho_a: f64,
    pub generator_seed: Option<u64>,
}

impl ProblemMeta {
    pub fn of(pd: &ProblemData, generator_seed: Option<u64>) -> Self {
        Self {
            n: pd.n(),
            m: pd.m(),
            rho_a: spectral_radius(pd.a()).unwrap_or(f64::NAN),
            generator_seed,
        }
    }
}

/// Error curve of one algorithm on one problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub problem: ProblemMeta,
    pub algorithm: Algorithm,
    /// Relative value error of the gain at each iteration, from 0.
    /// Destabilizing gains are `+∞` (written as `"inf"`).
    #[serde(with = "real::vec")]
    pub errors: Vec<f64>,
    /// Exact solvers: whether the step tolerance was met.
    pub converged: bool,
    /// Master seed of the rollouts (approximate algorithms only).
    pub rollout_seed: Option<u64>,
    pub config: serde_json::Value,
    pub runtime_secs: f64,
    /// Solver failure that cut the curve short.
    pub failure: Option<String>,
}

impl ExperimentResult {
    /// Error at `iteration`, holding the last value past the end of a
    /// converged run.
    pub fn error_at(&self, iteration: usize) -> Option<f64> {
        match self.errors.get(iteration) {
            Some(&e) => Some(e),
            None if self.converged => self.errors.last().copied(),
            None => None,
        }
    }

    /// First iteration whose error is at most `threshold`.
    pub fn first_below(&self, threshold: f64) -> Option<usize> {
        self.errors.iter().position(|&e| e <= threshold)
    }
}

fn curve(pd: &ProblemData, reference: &Reference, trace: &IterateTrace) -> Vec<f64> {
    trace
        .gains()
        .map(|k| reference.relative_error(pd, k))
        .collect()
}

fn solver_outcome(
    pd: &ProblemData,
    reference: &Reference,
    result: Result<(Gain, lqr_mpi::ValueMatrix, IterateTrace), SolveError>,
) -> (Vec<f64>, bool, Option<String>) {
    match result {
        Ok((_, _, trace)) => (curve(pd, reference, &trace), true, None),
        Err(SolveError::NonConvergence { trace, .. }) => {
            (curve(pd, reference, &trace), false, None)
        }
        Err(e) => {
            let errors = e
                .trace()
                .map(|t| curve(pd, reference, t))
                .unwrap_or_default();
            (errors, false, Some(e.to_string()))
        }
    }
}

/// Runs PI or MPI and scores every iterate.
pub fn run_exact(
    pd: &ProblemData,
    reference: &Reference,
    k0: &Gain,
    algorithm: Algorithm,
    cfg: &SolverConfig,
    generator_seed: Option<u64>,
) -> ExperimentResult {
    let start = Instant::now();
    let result = match algorithm {
        Algorithm::Pi => policy_iteration(pd, k0, cfg),
        Algorithm::Mpi => midpoint_policy_iteration(pd, k0, cfg),
        _ => panic!("run_exact called with {algorithm}"),
    };
    let runtime_secs = start.elapsed().as_secs_f64();
    let (errors, converged, failure) = solver_outcome(pd, reference, result);
    ExperimentResult {
        problem: ProblemMeta::of(pd, generator_seed),
        algorithm,
        errors,
        converged,
        rollout_seed: None,
        config: serde_json::json!({
            "tolerance": cfg.tolerance,
            "max_iterations": cfg.max_iterations,
        }),
        runtime_secs,
        failure,
    }
}

/// Runs API or AMPI with the LSTDQ estimator and scores every iterate on the
/// true model.
pub fn run_approximate(
    pd: &ProblemData,
    reference: &Reference,
    k0: &Gain,
    algorithm: Algorithm,
    cfg: &AmpiConfig,
    generator_seed: Option<u64>,
) -> ExperimentResult {
    let est = LstdqEstimator::new(pd.w().clone());
    let start = Instant::now();
    let result = match algorithm {
        Algorithm::Api => approximate_policy_iteration(pd, k0, cfg, &est),
        Algorithm::Ampi => approximate_midpoint_policy_iteration(pd, k0, cfg, &est),
        _ => panic!("run_approximate called with {algorithm}"),
    };
    let runtime_secs = start.elapsed().as_secs_f64();
    let (errors, failure) = match result {
        Ok((_, _, trace)) => (curve(pd, reference, &trace), None),
        Err(e) => (
            e.trace()
                .map(|t| curve(pd, reference, t))
                .unwrap_or_default(),
            Some(e.to_string()),
        ),
    };
    ExperimentResult {
        problem: ProblemMeta::of(pd, generator_seed),
        algorithm,
        errors,
        converged: false,
        rollout_seed: Some(cfg.master_seed),
        config: serde_json::json!({
            "iterations": cfg.iterations,
            "rollout_length": cfg.rollout.length,
            "explore_scale": cfg.rollout.explore_scale,
            "initial_state_covariance": "identity",
            "data_mode": match cfg.mode { DataMode::Off => "off", DataMode::On => "on" },
            "rcond": est.rcond,
        }),
        runtime_secs,
        failure,
    }
}

/// Settings of the inertial-mass comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassConfig {
    pub params: MassParams,
    pub rollout_len: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub exact_max_iterations: usize,
    pub approx_iterations: usize,
}

impl Default for MassConfig {
    fn default() -> Self {
        Self {
            params: MassParams::default(),
            rollout_len: 300,
            seed: 0,
            tolerance: 1e-12,
            exact_max_iterations: 12,
            approx_iterations: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassReport {
    pub config: MassConfig,
    pub initial_gain: Vec<f64>,
    pub results: Vec<ExperimentResult>,
}

impl MassReport {
    pub fn result(&self, algorithm: Algorithm) -> &ExperimentResult {
        self.results
            .iter()
            .find(|r| r.algorithm == algorithm)
            .expect("all four algorithms are run")
    }
}

/// PI and MPI on the true model, API and AMPI (off-policy, one shared
/// rollout) from the same initial gain.
pub fn run_representative(cfg: &MassConfig) -> Result<MassReport, Error> {
    let pd = mass_problem(&cfg.params)?;
    let reference = Reference::new(&pd)?;
    let k0 = mass_k0();
    let exact = SolverConfig {
        tolerance: cfg.tolerance,
        max_iterations: cfg.exact_max_iterations,
        record_trace: true,
    };
    let approx = AmpiConfig {
        iterations: cfg.approx_iterations,
        rollout: RolloutConfig::standard(pd.n(), cfg.rollout_len),
        mode: DataMode::Off,
        master_seed: cfg.seed,
    };
    let results = Algorithm::ALL
        .iter()
        .map(|&alg| {
            if alg.is_exact() {
                run_exact(&pd, &reference, &k0, alg, &exact, None)
            } else {
                run_approximate(&pd, &reference, &k0, alg, &approx, None)
            }
        })
        .collect();
    Ok(MassReport {
        config: cfg.clone(),
        initial_gain: k0.matrix().iter().copied().collect(),
        results,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Exact,
    Approximate,
}

impl Mode {
    pub fn algorithms(self) -> (Algorithm, Algorithm) {
        match self {
            Mode::Exact => (Algorithm::Pi, Algorithm::Mpi),
            Mode::Approximate => (Algorithm::Api, Algorithm::Ampi),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub count: usize,
    pub n: usize,
    pub m: usize,
    pub master_seed: u64,
    pub mode: Mode,
    pub rollout_len: usize,
    /// Iterations of the approximate solvers and iteration budget of the
    /// exact ones.
    pub iterations: usize,
    pub target_error: f64,
    pub rho_max: f64,
    pub tolerance: f64,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            count: 200,
            n: 4,
            m: 2,
            master_seed: 0,
            mode: Mode::Exact,
            rollout_len: 300,
            iterations: 10,
            target_error: 10.0,
            rho_max: 2.0,
            tolerance: 1e-12,
        }
    }
}

/// Seeds of one Monte Carlo instance, derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceSeeds {
    pub problem: u64,
    pub gain: u64,
    pub rollout: u64,
    pub rho_target: f64,
}

impl InstanceSeeds {
    pub fn derive(master: u64, index: usize, rho_max: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master);
        rng.set_stream(index as u64);
        let problem = rng.next_u64();
        let gain = rng.next_u64();
        let rollout = rng.next_u64();
        let unit = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        Self {
            problem,
            gain,
            rollout,
            rho_target: unit * rho_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceResult {
    pub index: usize,
    pub seeds: InstanceSeeds,
    pub rho_a: f64,
    pub standard: Option<ExperimentResult>,
    pub midpoint: Option<ExperimentResult>,
    /// Midpoint error over standard error per iteration; `None` where the
    /// standard error is zero or infinite.
    #[serde(with = "real::option_vec")]
    pub ratios: Vec<Option<f64>>,
    /// Setup failure (Riccati solve or initial-gain search).
    pub failure: Option<String>,
}

impl InstanceResult {
    pub fn ok(&self) -> bool {
        self.failure.is_none()
            && self.standard.as_ref().is_some_and(|r| r.failure.is_none())
            && self.midpoint.as_ref().is_some_and(|r| r.failure.is_none())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationQuantiles {
    pub algorithm: Algorithm,
    pub iteration: usize,
    pub count: usize,
    #[serde(with = "real::scalar")]
    pub q10: f64,
    #[serde(with = "real::scalar")]
    pub median: f64,
    #[serde(with = "real::scalar")]
    pub q90: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub config: MonteCarloConfig,
    pub instances: Vec<InstanceResult>,
    pub quantiles: Vec<IterationQuantiles>,
    pub runtime_secs: f64,
    pub notes: Vec<String>,
}

impl MonteCarloSummary {
    /// Fraction of all instances whose midpoint error at `iteration` is
    /// below `threshold`. Failed instances count against the fraction.
    pub fn midpoint_fraction_below(&self, iteration: usize, threshold: f64) -> f64 {
        let hits = self
            .instances
            .iter()
            .filter(|i| {
                i.midpoint
                    .as_ref()
                    .and_then(|r| r.error_at(iteration))
                    .is_some_and(|e| e < threshold)
            })
            .count();
        hits as f64 / self.instances.len() as f64
    }

    /// Fraction of all instances whose midpoint/standard ratio at
    /// `iteration` is below one.
    pub fn ratio_fraction_below_one(&self, iteration: usize) -> f64 {
        let hits = self
            .instances
            .iter()
            .filter(|i| {
                i.ratios
                    .get(iteration)
                    .copied()
                    .flatten()
                    .is_some_and(|r| r < 1.0)
            })
            .count();
        hits as f64 / self.instances.len() as f64
    }

    pub fn failures(&self) -> usize {
        self.instances.iter().filter(|i| !i.ok()).count()
    }

    /// (standard, midpoint) algorithm names of this sweep.
    pub fn algorithms(&self) -> (Algorithm, Algorithm) {
        self.config.mode.algorithms()
    }
}

fn ratios(
    standard: &ExperimentResult,
    midpoint: &ExperimentResult,
    len: usize,
) -> Vec<Option<f64>> {
    (0..len)
        .map(|k| match (midpoint.error_at(k), standard.error_at(k)) {
            (Some(num), Some(den)) if den > 0.0 && den.is_finite() => Some(num / den),
            _ => None,
        })
        .collect()
}

fn pad(result: &mut ExperimentResult, len: usize) {
    if result.converged {
        if let Some(&last) = result.errors.last() {
            result.errors.resize(len.max(result.errors.len()), last);
        }
    }
}

fn run_instance(cfg: &MonteCarloConfig, index: usize) -> InstanceResult {
    let seeds = InstanceSeeds::derive(cfg.master_seed, index, cfg.rho_max);
    let mut out = InstanceResult {
        index,
        seeds,
        rho_a: f64::NAN,
        standard: None,
        midpoint: None,
        ratios: Vec::new(),
        failure: None,
    };
    let setup = random_problem(cfg.n, cfg.m, seeds.rho_target, seeds.problem)
        .map_err(|e| e.to_string())
        .and_then(|pd| {
            let reference = Reference::new(&pd).map_err(|e| e.to_string())?;
            let k0 = perturbed_initial_gain(&pd, &reference, cfg.target_error, seeds.gain)
                .map_err(|e| e.to_string())?;
            Ok((pd, reference, k0))
        });
    let (pd, reference, k0) = match setup {
        Ok(s) => s,
        Err(e) => {
            out.failure = Some(e);
            return out;
        }
    };
    out.rho_a = spectral_radius(pd.a()).unwrap_or(f64::NAN);
    let len = cfg.iterations + 1;
    let (mut standard, mut midpoint) = match cfg.mode {
        Mode::Exact => {
            let solver = SolverConfig {
                tolerance: cfg.tolerance,
                max_iterations: cfg.iterations,
                record_trace: true,
            };
            (
                run_exact(
                    &pd,
                    &reference,
                    &k0,
                    Algorithm::Pi,
                    &solver,
                    Some(seeds.problem),
                ),
                run_exact(
                    &pd,
                    &reference,
                    &k0,
                    Algorithm::Mpi,
                    &solver,
                    Some(seeds.problem),
                ),
            )
        }
        Mode::Approximate => {
            let approx = AmpiConfig {
                iterations: cfg.iterations,
                rollout: RolloutConfig::standard(pd.n(), cfg.rollout_len),
                mode: DataMode::Off,
                master_seed: seeds.rollout,
            };
            (
                run_approximate(
                    &pd,
                    &reference,
                    &k0,
                    Algorithm::Api,
                    &approx,
                    Some(seeds.problem),
                ),
                run_approximate(
                    &pd,
                    &reference,
                    &k0,
                    Algorithm::Ampi,
                    &approx,
                    Some(seeds.problem),
                ),
            )
        }
    };
    pad(&mut standard, len);
    pad(&mut midpoint, len);
    out.ratios = ratios(&standard, &midpoint, len);
    out.standard = Some(standard);
    out.midpoint = Some(midpoint);
    out
}

fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let idx = (q * (sorted.len() - 1) as f64).round() as usize;
    sorted[idx]
}

fn quantiles(
    instances: &[InstanceResult],
    len: usize,
    pick: (Algorithm, Algorithm),
) -> Vec<IterationQuantiles> {
    let mut out = Vec::new();
    for (algorithm, midpoint) in [(pick.0, false), (pick.1, true)] {
        for iteration in 0..len {
            let mut values: Vec<f64> = instances
                .iter()
                .filter_map(|i| {
                    if midpoint {
                        i.midpoint.as_ref()
                    } else {
                        i.standard.as_ref()
                    }
                })
                .filter_map(|r| r.errors.get(iteration).copied())
                .collect();
            if values.is_empty() {
                continue;
            }
            values.sort_by(f64::total_cmp);
            out.push(IterationQuantiles {
                algorithm,
                iteration,
                count: values.len(),
                q10: nearest_rank(&values, 0.1),
                median: nearest_rank(&values, 0.5),
                q90: nearest_rank(&values, 0.9),
            });
        }
    }
    out
}

/// Random instances with `ρ(A) ~ U[0, ρ_max]`, each started from a gain at
/// the target relative error. Standard and midpoint variants share the
/// instance, initial gain and (approximate mode) rollout seed. Instances run
/// in parallel; results are ordered by instance index.
pub fn run_monte_carlo(cfg: &MonteCarloConfig) -> Result<MonteCarloSummary, Error> {
    if cfg.count == 0 || cfg.n == 0 || cfg.m == 0 || cfg.iterations == 0 {
        return Err(Error::InvalidInput(
            "count, n, m and iterations must be at least 1".into(),
        ));
    }
    if cfg.mode == Mode::Approximate && cfg.rollout_len == 0 {
        return Err(Error::InvalidInput(
            "rollout length must be at least 1".into(),
        ));
    }
    let start = Instant::now();
    let instances: Vec<InstanceResult> = (0..cfg.count)
        .into_par_iter()
        .map(|i| run_instance(cfg, i))
        .collect();
    let quantiles = quantiles(&instances, cfg.iterations + 1, cfg.mode.algorithms());
    Ok(MonteCarloSummary {
        config: cfg.clone(),
        instances,
        quantiles,
        runtime_secs: start.elapsed().as_secs_f64(),
        notes: vec![
            "destabilizing iterates are scored as +inf".into(),
            "initial states and exploration inputs are standard normal in R^n and R^m".into(),
            "converged exact runs hold their final error for the remaining iterations".into(),
        ],
    })
}
