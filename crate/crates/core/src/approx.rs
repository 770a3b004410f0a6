//! Model-free policy iteration (API) and midpoint policy iteration (AMPI).
//!
//! Both solvers see the system only through rollouts and a
//! [`ValueEstimator`]. The problem data passed in is used to simulate, never
//! to compute iterates.
//!
//! Traces follow the exact solvers: record 0 holds `K̂₀`, record `j` holds
//! `K̂_j`. The `q_value` of a record is the estimate the next gain is
//! computed from.
//!
//! Rollout streams: the initial rollout uses index 0. In [`DataMode::On`],
//! API iteration `k ≥ 1` uses index `k`, and AMPI iteration `k` uses
//! `2k + 1` under `K̂_k` and `2k + 2` under `L̂_k`.

use crate::error::{Error, SolveError};
use crate::exact::{IterateRecord, IterateTrace, Recorder};
use crate::kernel::{self, dlyap, symmetrize, SYMMETRY_TOL};
use crate::lstdq::{lstdq, LstdqInput};
use crate::operators::{
    self, closed_loop_penalty, gain_from_q, Gain, ProblemData, StateActionValue,
};
use crate::simulation::{rollout, Rollout, RolloutConfig, RolloutSeed};
use crate::Matrix;

use alloc::format;

/// Estimates the state-action value matrix of `k_eval` under an arbitrary
/// symmetric penalty from a rollout.
pub trait ValueEstimator {
    fn estimate(
        &self,
        data: &Rollout,
        k_eval: &Gain,
        penalty: &Matrix,
    ) -> Result<StateActionValue, Error>;
}

impl<E: ValueEstimator + ?Sized> ValueEstimator for &E {
    fn estimate(
        &self,
        data: &Rollout,
        k_eval: &Gain,
        penalty: &Matrix,
    ) -> Result<StateActionValue, Error> {
        (**self).estimate(data, k_eval, penalty)
    }
}

/// LSTDQ with a known noise covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct LstdqEstimator {
    pub noise_cov: Matrix,
    pub rcond: f64,
}

impl LstdqEstimator {
    pub fn new(noise_cov: Matrix) -> Self {
        Self {
            noise_cov,
            rcond: kernel::DEFAULT_RCOND,
        }
    }
}

impl ValueEstimator for LstdqEstimator {
    fn estimate(
        &self,
        data: &Rollout,
        k_eval: &Gain,
        penalty: &Matrix,
    ) -> Result<StateActionValue, Error> {
        lstdq(&LstdqInput {
            rollout: data,
            k_eval,
            q_eff: penalty,
            w: &self.noise_cov,
            rcond: self.rcond,
        })
    }
}

/// Ignores the data and returns the exact
/// `penalty + [A B]ᵀ dlyap(A+BK, [I;K]ᵀ penalty [I;K]) [A B]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactOracle {
    pub pd: ProblemData,
}

impl ExactOracle {
    pub fn new(pd: ProblemData) -> Self {
        Self { pd }
    }
}

impl ValueEstimator for ExactOracle {
    fn estimate(
        &self,
        _data: &Rollout,
        k_eval: &Gain,
        penalty: &Matrix,
    ) -> Result<StateActionValue, Error> {
        let d = self.pd.n() + self.pd.m();
        if penalty.shape() != (d, d) || !kernel::is_symmetric(penalty, SYMMETRY_TOL) {
            return Err(Error::InvalidInput(format!(
                "penalty must be symmetric {d}x{d}"
            )));
        }
        operators::check_gain(&self.pd, k_eval)?;
        let f = self.pd.a() + self.pd.b() * k_eval.matrix();
        let p = dlyap(&f, &closed_loop_penalty(penalty, k_eval))?;
        operators::state_action_matrix_with(&self.pd, penalty, &p)
    }
}

/// Where each iteration's data comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DataMode {
    /// Every estimate reuses the initial rollout.
    Off,
    /// Fresh rollouts under the policy being evaluated.
    On,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmpiConfig {
    /// Number of iterations `N`.
    pub iterations: usize,
    pub rollout: RolloutConfig,
    pub mode: DataMode,
    pub master_seed: u64,
}

impl AmpiConfig {
    fn validate(&self) -> Result<(), SolveError> {
        if self.iterations == 0 {
            return Err(SolveError::InitialGain(Error::InvalidInput(
                "iterations must be at least 1".into(),
            )));
        }
        if self.rollout.length == 0 {
            return Err(SolveError::InitialGain(Error::InvalidInput(
                "rollout length must be at least 1".into(),
            )));
        }
        Ok(())
    }

    fn seed(&self, index: u64) -> RolloutSeed {
        RolloutSeed::new(self.master_seed, index)
    }
}

/// `blockdiag([I;K]ᵀ H [I;K], 0_m) − (H − Q)`.
pub fn midpoint_q_penalty(h: &StateActionValue, k: &Gain, q: &Matrix) -> Result<Matrix, Error> {
    let (n, m) = (h.n(), h.m());
    if k.matrix().shape() != (m, n) {
        return Err(Error::DimensionMismatch(format!("gain must be {m}x{n}")));
    }
    if q.shape() != (n + m, n + m) {
        return Err(Error::DimensionMismatch(format!(
            "penalty must be {0}x{0}",
            n + m
        )));
    }
    let mut out = q - h.matrix();
    let value = closed_loop_penalty(h.matrix(), k);
    let mut xx = out.view_mut((0, 0), (n, n));
    xx += value;
    Ok(symmetrize(&out))
}

struct Run<'a> {
    pd: &'a ProblemData,
    cfg: &'a AmpiConfig,
    rec: Recorder,
}

impl Run<'_> {
    fn rollout(&self, k: &Gain, index: u64, iteration: usize) -> Result<Rollout, SolveError> {
        rollout(self.pd, k, &self.cfg.rollout, self.cfg.seed(index)).map_err(|source| {
            SolveError::Rollout {
                iteration,
                source,
                trace: self.rec.snapshot(),
            }
        })
    }

    fn estimation_error(&self, iteration: usize) -> impl FnOnce(Error) -> SolveError + '_ {
        move |source| SolveError::Estimation {
            iteration,
            source,
            trace: self.rec.snapshot(),
        }
    }
}

fn initial(pd: &ProblemData, k0: &Gain, cfg: &AmpiConfig) -> Result<Rollout, SolveError> {
    cfg.validate()?;
    operators::check_gain(pd, k0).map_err(SolveError::InitialGain)?;
    match rollout(pd, k0, &cfg.rollout, cfg.seed(0)) {
        Ok(r) => Ok(r),
        Err(
            e @ (Error::Unstable { .. } | Error::InvalidInput(_) | Error::DimensionMismatch(_)),
        ) => Err(SolveError::InitialGain(e)),
        Err(source) => Err(SolveError::Rollout {
            iteration: 0,
            source,
            trace: IterateTrace::default(),
        }),
    }
}

/// Approximate policy iteration: `Ĥ_k = est(data, K̂_k, Q)`,
/// `K̂_{k+1} = −(Ĥ_k)_uu⁻¹ (Ĥ_k)_ux`, for exactly `N` iterations.
///
/// Returns `K̂_N` and the estimate `Ĥ_{N−1}` it was computed from.
pub fn approximate_policy_iteration<E: ValueEstimator>(
    pd: &ProblemData,
    k0: &Gain,
    cfg: &AmpiConfig,
    est: &E,
) -> Result<(Gain, StateActionValue, IterateTrace), SolveError> {
    let data = initial(pd, k0, cfg)?;
    let mut run = Run {
        pd,
        cfg,
        rec: Recorder::new(true),
    };
    let q = pd.q();
    let mut k = k0.clone();
    let mut h_last = None;

    for iteration in 0..cfg.iterations {
        let fresh;
        let d = match cfg.mode {
            DataMode::On if iteration > 0 => {
                fresh = run.rollout(&k, iteration as u64, iteration)?;
                &fresh
            }
            _ => &data,
        };
        let h = est
            .estimate(d, &k, q)
            .map_err(run.estimation_error(iteration))?;
        let k_next = gain_from_q(&h).map_err(run.estimation_error(iteration))?;
        let mut r = IterateRecord::new(iteration, k);
        r.q_value = Some(h.clone());
        run.rec.push(r);
        k = k_next;
        h_last = Some(h);
    }
    run.rec.push(IterateRecord::new(cfg.iterations, k.clone()));
    let h = h_last.expect("at least one iteration");
    Ok((k, h, run.rec.finish()))
}

/// Approximate midpoint policy iteration.
///
/// ```text
/// Ĥ₀ = est(𝒟, K̂₀, Q)
/// Ĥ^N = est(𝒟^N, K̂_k, Q)
/// L̂_k = gain((Ĥ_k + Ĥ^N)/2)
/// Q^M = blockdiag([I;K̂_k]ᵀĤ_k[I;K̂_k], 0) − (Ĥ_k − Q)
/// Ĥ_{k+1} = est(𝒟^M, L̂_k, Q^M) + Q − Q^M
/// K̂_{k+1} = gain(Ĥ_{k+1})
/// ```
///
/// Returns `K̂_N` and `Ĥ_N`.
pub fn approximate_midpoint_policy_iteration<E: ValueEstimator>(
    pd: &ProblemData,
    k0: &Gain,
    cfg: &AmpiConfig,
    est: &E,
) -> Result<(Gain, StateActionValue, IterateTrace), SolveError> {
    let data = initial(pd, k0, cfg)?;
    let mut run = Run {
        pd,
        cfg,
        rec: Recorder::new(true),
    };
    let q = pd.q();
    let n = pd.n();
    let mut k = k0.clone();
    let mut h = est
        .estimate(&data, &k, q)
        .map_err(run.estimation_error(0))?;
    let mut first = IterateRecord::new(0, k.clone());
    first.q_value = Some(h.clone());
    run.rec.push(first);

    for iteration in 0..cfg.iterations {
        let step = iteration + 1;
        let fresh_n;
        let d_n = match cfg.mode {
            DataMode::Off => &data,
            DataMode::On => {
                fresh_n = run.rollout(&k, 2 * iteration as u64 + 1, step)?;
                &fresh_n
            }
        };
        let h_newton = est
            .estimate(d_n, &k, q)
            .map_err(run.estimation_error(step))?;
        let l = gain_from_q(&h.midpoint(&h_newton)).map_err(run.estimation_error(step))?;
        let q_m = midpoint_q_penalty(&h, &k, q).map_err(run.estimation_error(step))?;

        // Ĥ^N = Ĥ_k makes the midpoint update the identity (P_{k+1} = P_k),
        // as on the first OFF-mode iteration.
        let h_next = if h_newton == h {
            h.clone()
        } else {
            let fresh_m;
            let d_m = match cfg.mode {
                DataMode::Off => &data,
                DataMode::On => {
                    fresh_m = run.rollout(&l, 2 * iteration as u64 + 2, step)?;
                    &fresh_m
                }
            };
            let h_o = est
                .estimate(d_m, &l, &q_m)
                .map_err(run.estimation_error(step))?;
            StateActionValue::from_symmetric(symmetrize(&(h_o.matrix() + q - &q_m)), n)
        };
        let k_next = gain_from_q(&h_next).map_err(run.estimation_error(step))?;

        let mut r = IterateRecord::new(step, k_next.clone());
        r.q_value = Some(h_next.clone());
        r.midpoint_gain = Some(l);
        run.rec.push(r);
        k = k_next;
        h = h_next;
    }
    Ok((k, h, run.rec.finish()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{
        midpoint_policy_iteration, policy_evaluation, policy_iteration, solve_are, SolverConfig,
    };
    use crate::operators::{gain_from_value, state_action_matrix, ValueMatrix};

    fn mass() -> ProblemData {
        ProblemData::new(
            Matrix::from_row_slice(2, 2, &[1.0, 0.01, 0.0, 1.0]),
            Matrix::from_row_slice(2, 1, &[0.0, 0.01]),
            Matrix::identity(3, 3),
            Matrix::identity(2, 2) * 1e-4,
        )
        .unwrap()
    }

    fn k0() -> Gain {
        Gain::new(Matrix::from_row_slice(1, 2, &[-0.035, -2.087])).unwrap()
    }

    fn cfg(iterations: usize, mode: DataMode) -> AmpiConfig {
        AmpiConfig {
            iterations,
            rollout: RolloutConfig::standard(2, 300),
            mode,
            master_seed: 17,
        }
    }

    fn gain_gap(a: &Gain, b: &Gain) -> f64 {
        (a.matrix() - b.matrix()).norm() / b.matrix().norm().max(1.0)
    }

    #[test]
    fn penalty_examples() {
        let q = Matrix::from_row_slice(3, 3, &[2.0, 0.1, 0.2, 0.1, 1.0, 0.3, 0.2, 0.3, 0.5]);
        let h = StateActionValue::new(q.clone(), 2).unwrap();
        let qm = midpoint_q_penalty(&h, &Gain::zeros(1, 2), &q).unwrap();
        let mut expected = Matrix::zeros(3, 3);
        expected
            .view_mut((0, 0), (2, 2))
            .copy_from(&q.view((0, 0), (2, 2)));
        assert!((qm - expected).norm() < 1e-15);
    }

    #[test]
    fn penalty_at_optimum() {
        let pd = mass();
        let p = solve_are(&pd).unwrap();
        let h = state_action_matrix(&pd, &p).unwrap();
        let k = gain_from_value(&pd, &p).unwrap();
        let qm = midpoint_q_penalty(&h, &k, pd.q()).unwrap();
        let ab = pd.transition();
        let mut expected = -(ab.transpose() * p.matrix() * &ab);
        let mut xx = expected.view_mut((0, 0), (2, 2));
        xx += p.matrix();
        assert!((&qm - expected).norm() < 1e-8 * qm.norm());
    }

    #[test]
    fn oracle_api_matches_pi() {
        let pd = mass();
        let oracle = ExactOracle::new(pd.clone());
        let (_, _, at) =
            approximate_policy_iteration(&pd, &k0(), &cfg(6, DataMode::Off), &oracle).unwrap();
        let scfg = SolverConfig {
            max_iterations: 6,
            tolerance: 1e-300,
            ..SolverConfig::default()
        };
        let pt = match policy_iteration(&pd, &k0(), &scfg) {
            Err(SolveError::NonConvergence { trace, .. }) => trace,
            Ok((_, _, t)) => t,
            Err(e) => panic!("{e}"),
        };
        assert_eq!(at.len(), 7);
        for (a, b) in at.gains().zip(pt.gains()) {
            assert!(gain_gap(a, b) < 1e-10);
        }
    }

    #[test]
    fn oracle_ampi_matches_mpi() {
        let pd = mass();
        let oracle = ExactOracle::new(pd.clone());
        let (_, _, at) =
            approximate_midpoint_policy_iteration(&pd, &k0(), &cfg(4, DataMode::On), &oracle)
                .unwrap();
        let scfg = SolverConfig {
            max_iterations: 4,
            tolerance: 1e-300,
            ..SolverConfig::default()
        };
        let mt = match midpoint_policy_iteration(&pd, &k0(), &scfg) {
            Err(SolveError::NonConvergence { trace, .. }) => trace,
            Ok((_, _, t)) => t,
            Err(e) => panic!("{e}"),
        };
        for (a, b) in at.gains().zip(mt.gains()) {
            assert!(gain_gap(a, b) < 1e-10, "{}", gain_gap(a, b));
        }
    }

    #[test]
    fn oracle_fixed_point() {
        let pd = mass();
        let p = solve_are(&pd).unwrap();
        let k_star = gain_from_value(&pd, &p).unwrap();
        let oracle = ExactOracle::new(pd.clone());
        let (_, _, t) =
            approximate_policy_iteration(&pd, &k_star, &cfg(3, DataMode::Off), &oracle).unwrap();
        for g in t.gains() {
            assert!(gain_gap(g, &k_star) < 1e-9);
        }
    }

    #[test]
    fn oracle_midpoint_average_is_linear() {
        let pd = mass();
        let oracle = ExactOracle::new(pd.clone());
        let data = rollout(
            &pd,
            &k0(),
            &RolloutConfig::standard(2, 2),
            RolloutSeed::new(0, 0),
        )
        .unwrap();
        let h0 = oracle.estimate(&data, &k0(), pd.q()).unwrap();
        let k1 = gain_from_q(&h0).unwrap();
        let h1 = oracle.estimate(&data, &k1, pd.q()).unwrap();
        let p0 = policy_evaluation(&pd, &k0()).unwrap();
        let p1 = policy_evaluation(&pd, &k1).unwrap();
        let mid = ValueMatrix::new((p0.matrix() + p1.matrix()) * 0.5).unwrap();
        let direct = state_action_matrix(&pd, &mid).unwrap();
        assert!(
            (h0.midpoint(&h1).matrix() - direct.matrix()).norm() < 1e-10 * direct.matrix().norm()
        );
    }

    #[test]
    fn lstdq_first_iterates_agree() {
        let pd = mass();
        let est = LstdqEstimator::new(pd.w().clone());
        let c = cfg(3, DataMode::Off);
        let (_, _, a) = approximate_policy_iteration(&pd, &k0(), &c, &est).unwrap();
        let (_, _, m) = approximate_midpoint_policy_iteration(&pd, &k0(), &c, &est).unwrap();
        assert_eq!(a.records[0].q_value, m.records[0].q_value);
        assert_eq!(m.records[1].gain, a.records[1].gain);
        assert_eq!(
            m.records[1].midpoint_gain.as_ref(),
            Some(&a.records[1].gain)
        );
    }

    #[test]
    fn off_mode_is_deterministic() {
        let pd = mass();
        let est = LstdqEstimator::new(pd.w().clone());
        let c = cfg(4, DataMode::Off);
        let (k1, _, t1) = approximate_midpoint_policy_iteration(&pd, &k0(), &c, &est).unwrap();
        let (k2, _, t2) = approximate_midpoint_policy_iteration(&pd, &k0(), &c, &est).unwrap();
        assert_eq!(k1, k2);
        assert_eq!(
            t1.gains().collect::<alloc::vec::Vec<_>>(),
            t2.gains().collect::<alloc::vec::Vec<_>>()
        );
    }

    #[test]
    fn destabilizing_initial_gain_rejected() {
        let pd = mass();
        let est = LstdqEstimator::new(pd.w().clone());
        let err =
            approximate_policy_iteration(&pd, &Gain::zeros(1, 2), &cfg(2, DataMode::Off), &est);
        assert!(matches!(
            err,
            Err(SolveError::InitialGain(Error::Unstable { .. }))
        ));
    }
}
