//! Model-based solvers.
//!
//! Trace indexing is shared by all four algorithms: record 0 holds the
//! initial gain, record `j ≥ 1` holds the gain produced by the `j`-th
//! policy improvement. For midpoint policy iteration the `j`-th gain is
//! `𝒦(P_{j−1})`, where `P_k` are the midpoint iterates, so record 1 is always
//! a plain Newton step and the model-free variant lines up record for
//! record.

use alloc::vec::Vec;
use core::time::Duration;

use crate::error::{Error, SolveError};
use crate::kernel::{self, dlyap, spectral_norm, symmetrize};
use crate::operators::{
    self, closed_loop_pair, gain_from_value, riccati_residual, Gain, ProblemData, StateActionValue,
    ValueMatrix,
};
use crate::Matrix;

/// Iterates whose Frobenius norm exceeds this are reported as divergent.
pub const DIVERGENCE_BOUND: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Stop once `‖P_k − P_{k−1}‖₂ ≤ tolerance`.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub record_trace: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-12,
            max_iterations: 50,
            record_trace: true,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<(), SolveError> {
        if !(self.tolerance > 0.0) {
            return Err(SolveError::InitialGain(Error::InvalidInput(
                "tolerance must be positive".into(),
            )));
        }
        if self.max_iterations == 0 {
            return Err(SolveError::InitialGain(Error::InvalidInput(
                "max_iterations must be at least 1".into(),
            )));
        }
        Ok(())
    }
}

/// One row of an [`IterateTrace`].
#[derive(Debug, Clone, PartialEq)]
pub struct IterateRecord {
    pub iteration: usize,
    pub gain: Gain,
    /// Value of `gain` on the true model, when the solver has it.
    pub value: Option<ValueMatrix>,
    /// Estimated state-action value matrix (model-free solvers).
    pub q_value: Option<StateActionValue>,
    /// Midpoint gain `L` computed while producing this record.
    pub midpoint_gain: Option<Gain>,
    /// `‖P_k − P_{k−1}‖₂` for the iterate that produced this record.
    pub step: Option<f64>,
    /// Time since the solver started (requires the `std` feature).
    pub elapsed: Option<Duration>,
}

impl IterateRecord {
    pub(crate) fn new(iteration: usize, gain: Gain) -> Self {
        Self {
            iteration,
            gain,
            value: None,
            q_value: None,
            midpoint_gain: None,
            step: None,
            elapsed: None,
        }
    }
}

/// Per-iteration history of a solver run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterateTrace {
    pub records: Vec<IterateRecord>,
}

impl IterateTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn gains(&self) -> impl Iterator<Item = &Gain> {
        self.records.iter().map(|r| &r.gain)
    }

    pub fn last(&self) -> Option<&IterateRecord> {
        self.records.last()
    }
}

pub(crate) struct Recorder {
    enabled: bool,
    trace: IterateTrace,
    #[cfg(feature = "std")]
    start: std::time::Instant,
}

impl Recorder {
    pub(crate) fn new(enabled: bool) -> Self {
        Self {
            enabled,
            trace: IterateTrace::default(),
            #[cfg(feature = "std")]
            start: std::time::Instant::now(),
        }
    }

    pub(crate) fn push(&mut self, mut record: IterateRecord) {
        if !self.enabled {
            return;
        }
        #[cfg(feature = "std")]
        {
            record.elapsed = Some(self.start.elapsed());
        }
        #[cfg(not(feature = "std"))]
        {
            record.elapsed = None;
        }
        self.trace.records.push(record);
    }

    pub(crate) fn snapshot(&self) -> IterateTrace {
        self.trace.clone()
    }

    pub(crate) fn finish(self) -> IterateTrace {
        self.trace
    }
}

/// `P = dlyap(A + BK, [I; K]ᵀ Q [I; K])`.
pub fn policy_evaluation(pd: &ProblemData, k: &Gain) -> Result<ValueMatrix, Error> {
    let (f, s) = closed_loop_pair(pd, k)?;
    Ok(ValueMatrix::from_symmetric(dlyap(&f, &s)?))
}

/// Kleinman–Hewer policy iteration.
///
/// Returns the last gain and its value once successive values differ by at
/// most `cfg.tolerance` in spectral norm.
pub fn policy_iteration(
    pd: &ProblemData,
    k0: &Gain,
    cfg: &SolverConfig,
) -> Result<(Gain, ValueMatrix, IterateTrace), SolveError> {
    cfg.validate()?;
    operators::check_gain(pd, k0).map_err(SolveError::InitialGain)?;
    let mut rec = Recorder::new(cfg.record_trace);
    let mut p = policy_evaluation(pd, k0).map_err(SolveError::InitialGain)?;
    let mut first = IterateRecord::new(0, k0.clone());
    first.value = Some(p.clone());
    rec.push(first);

    for iteration in 1..=cfg.max_iterations {
        let step_err = |source, rec: &Recorder| SolveError::Step {
            iteration,
            source,
            trace: rec.snapshot(),
        };
        let k = gain_from_value(pd, &p).map_err(|e| step_err(e, &rec))?;
        let p_next = policy_evaluation(pd, &k).map_err(|e| step_err(e, &rec))?;
        let norm = p_next.matrix().norm();
        if !(norm <= DIVERGENCE_BOUND) {
            return Err(SolveError::Divergence {
                iteration,
                norm,
                trace: rec.finish(),
            });
        }
        let step = spectral_norm(&(p_next.matrix() - p.matrix()));
        let mut r = IterateRecord::new(iteration, k.clone());
        r.value = Some(p_next.clone());
        r.step = Some(step);
        rec.push(r);
        p = p_next;
        if step <= cfg.tolerance {
            return Ok((k, p, rec.finish()));
        }
    }
    Err(SolveError::NonConvergence {
        max_iterations: cfg.max_iterations,
        trace: rec.finish(),
    })
}

/// Exact midpoint policy iteration.
///
/// Each iteration takes the Newton (policy iteration) step from `P_k`,
/// forms the midpoint `M_k = (P_k + P^N)/2`, and solves the Newton equation
/// with the derivative evaluated at `M_k`:
///
/// ```text
/// K  = 𝒦(P_k),  P^N = dlyap(A+BK, [I;K]ᵀQ[I;K])
/// L  = 𝒦((P_k + P^N)/2)
/// P_{k+1} = dlyap(A+BL, [I;K]ᵀQ[I;K] + (A+BK)ᵀP_k(A+BK) − (A+BL)ᵀP_k(A+BL))
/// ```
///
/// Returns `𝒦(P_k)` and `P_k` once `‖P_k − P_{k−1}‖₂ ≤ cfg.tolerance`.
pub fn midpoint_policy_iteration(
    pd: &ProblemData,
    k0: &Gain,
    cfg: &SolverConfig,
) -> Result<(Gain, ValueMatrix, IterateTrace), SolveError> {
    cfg.validate()?;
    operators::check_gain(pd, k0).map_err(SolveError::InitialGain)?;
    let mut rec = Recorder::new(cfg.record_trace);
    let mut p = policy_evaluation(pd, k0).map_err(SolveError::InitialGain)?;
    let mut first = IterateRecord::new(0, k0.clone());
    first.value = Some(p.clone());
    rec.push(first);

    for iteration in 1..=cfg.max_iterations {
        let step_err = |source, rec: &Recorder| SolveError::Step {
            iteration,
            source,
            trace: rec.snapshot(),
        };
        let k = gain_from_value(pd, &p).map_err(|e| step_err(e, &rec))?;
        let (f_n, s_n) = closed_loop_pair(pd, &k).map_err(|e| step_err(e, &rec))?;
        let p_newton = dlyap(&f_n, &s_n).map_err(|e| step_err(e, &rec))?;
        let mid = ValueMatrix::from_symmetric((p.matrix() + &p_newton) * 0.5);
        let l = gain_from_value(pd, &mid).map_err(|e| step_err(e, &rec))?;
        let f_m = pd.a() + pd.b() * l.matrix();
        let s_m = symmetrize(
            &(&s_n + f_n.transpose() * p.matrix() * &f_n - f_m.transpose() * p.matrix() * &f_m),
        );
        let p_next = match dlyap(&f_m, &s_m) {
            Ok(x) => x,
            Err(Error::Unstable { spectral_radius }) => {
                return Err(SolveError::MidpointUnstable {
                    iteration,
                    spectral_radius,
                    trace: rec.finish(),
                })
            }
            Err(e) => return Err(step_err(e, &rec)),
        };
        let norm = p_next.norm();
        if !(norm <= DIVERGENCE_BOUND) {
            return Err(SolveError::Divergence {
                iteration,
                norm,
                trace: rec.finish(),
            });
        }
        let step = spectral_norm(&(&p_next - p.matrix()));
        let mut r = IterateRecord::new(iteration, k);
        r.value = Some(ValueMatrix::from_symmetric(p_newton));
        r.midpoint_gain = Some(l);
        r.step = Some(step);
        rec.push(r);
        p = ValueMatrix::from_symmetric(p_next);
        if step <= cfg.tolerance {
            let k_final = gain_from_value(pd, &p).map_err(|e| step_err(e, &rec))?;
            return Ok((k_final, p, rec.finish()));
        }
    }
    Err(SolveError::NonConvergence {
        max_iterations: cfg.max_iterations,
        trace: rec.finish(),
    })
}

const VI_MAX_ITERATIONS: usize = 1_000_000;
const VI_SWITCH_TOL: f64 = 1e-6;
const POLISH_TOL: f64 = 1e-14;
const POLISH_MAX_ITERATIONS: usize = 50;

/// Stabilizing solution of `ℛ(P) = 0`.
///
/// Value iteration `P ← P + ℛ(P)` from `P = Q_xx` until the relative change
/// drops below 1e-6, then policy iteration from `𝒦(P)` to polish. If the
/// value-iteration gain is not yet stabilizing, value iteration continues
/// with a tighter switch threshold.
pub fn solve_are(pd: &ProblemData) -> Result<ValueMatrix, Error> {
    let mut p = symmetrize(&pd.q_xx());
    let mut switch_tol = VI_SWITCH_TOL;
    let mut polished: Option<ValueMatrix> = None;
    for _ in 0..VI_MAX_ITERATIONS {
        let vp = ValueMatrix::from_symmetric(p.clone());
        let next = symmetrize(&(&p + riccati_residual(pd, &vp)?));
        let norm = next.norm();
        if !(norm <= DIVERGENCE_BOUND) {
            return Err(Error::Infeasible { norm });
        }
        let rel = (&next - &p).norm() / norm.max(f64::MIN_POSITIVE);
        p = next;
        if rel < switch_tol {
            match polish(pd, &ValueMatrix::from_symmetric(p.clone())) {
                Ok(x) => {
                    polished = Some(x);
                    break;
                }
                Err(Error::Unstable { .. }) if switch_tol > 1e-15 => switch_tol *= 1e-3,
                Err(e) => return Err(e),
            }
        }
    }
    let p = polished.ok_or(Error::Numerical("value iteration did not converge"))?;
    let residual = riccati_residual(pd, &p)?.norm();
    if residual > 1e-12 * p.matrix().trace().max(1.0) {
        return Err(Error::Numerical(
            "Riccati residual above tolerance after polishing",
        ));
    }
    Ok(p)
}

/// Policy iteration from `𝒦(p)`, keeping the iterate with the smallest
/// Riccati residual.
fn polish(pd: &ProblemData, p: &ValueMatrix) -> Result<ValueMatrix, Error> {
    let mut k = gain_from_value(pd, p)?;
    let mut current = policy_evaluation(pd, &k)?;
    let mut best_res = riccati_residual(pd, &current)?.norm();
    let mut best = current.clone();
    for _ in 0..POLISH_MAX_ITERATIONS {
        k = gain_from_value(pd, &current)?;
        let next = policy_evaluation(pd, &k)?;
        let step = spectral_norm(&(next.matrix() - current.matrix()));
        let res = riccati_residual(pd, &next)?.norm();
        if res < best_res {
            best_res = res;
            best = next.clone();
        }
        let scale = spectral_norm(next.matrix()).max(1.0);
        current = next;
        if step <= POLISH_TOL * scale {
            break;
        }
    }
    Ok(best)
}

/// Closed window of errors used by [`convergence_order`].
pub const ORDER_WINDOW: (f64, f64) = (1e-13, 1e-1);

/// Empirical convergence order of an error sequence.
///
/// Errors outside [`ORDER_WINDOW`] are dropped, the
/// remainder is cut at the first entry that fails to decrease, and the
/// least-squares slope of `log e_{k+1}` against `log e_k` is returned.
pub fn convergence_order(errors: &[f64]) -> Result<f64, Error> {
    let (lo, hi) = ORDER_WINDOW;
    let mut seq: Vec<f64> = Vec::new();
    for &e in errors.iter().filter(|&&e| e >= lo && e <= hi) {
        if seq.last().is_some_and(|&prev| e >= prev) {
            break;
        }
        seq.push(e);
    }
    if seq.len() < 3 {
        return Err(Error::InsufficientData(seq.len()));
    }
    let logs: Vec<f64> = seq.iter().map(|&e| libm::log(e)).collect();
    let xs = &logs[..logs.len() - 1];
    let ys = &logs[1..];
    let count = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / count;
    let mean_y = ys.iter().sum::<f64>() / count;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mean_x) * (y - mean_y);
        sxx += (x - mean_x) * (x - mean_x);
    }
    Ok(sxy / sxx)
}

/// `‖P − P*‖₂ / Tr(P*)`.
pub fn relative_deviation(p: &Matrix, p_star: &ValueMatrix) -> f64 {
    spectral_norm(&(p - p_star.matrix())) / p_star.matrix().trace()
}

/// `true` when every eigenvalue of `A + BK` is inside the stability margin.
pub fn is_stabilizing(pd: &ProblemData, k: &Gain) -> bool {
    closed_loop_pair(pd, k)
        .ok()
        .and_then(|(f, _)| kernel::ensure_schur_stable(&f).ok())
        .is_some()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar(a: f64, b: f64) -> ProblemData {
        ProblemData::new(
            Matrix::from_element(1, 1, a),
            Matrix::from_element(1, 1, b),
            Matrix::identity(2, 2),
            Matrix::zeros(1, 1),
        )
        .unwrap()
    }

    #[test]
    fn evaluation_without_input_effect() {
        let pd = scalar(0.5, 0.0);
        let p =
            policy_evaluation(&pd, &Gain::new(Matrix::from_element(1, 1, 0.0)).unwrap()).unwrap();
        assert_relative_eq!(p.matrix()[(0, 0)], 4.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn evaluation_rejects_destabilizing_gain() {
        let pd = scalar(1.1, 1.0);
        let err = policy_evaluation(&pd, &Gain::zeros(1, 1)).unwrap_err();
        assert!(matches!(err, Error::Unstable { .. }));
        let err = policy_iteration(&pd, &Gain::zeros(1, 1), &SolverConfig::default()).unwrap_err();
        assert!(matches!(
            err,
            SolveError::InitialGain(Error::Unstable { .. })
        ));
        assert!(err.trace().is_none());
    }

    #[test]
    fn scalar_are_matches_quadratic_formula() {
        // p = 1 + a²p − a²p²/(1 + p)  ⇔  p² − a²p − 1 = 0
        let a2: f64 = 1.21;
        let p_exact = 0.5 * (a2 + libm::sqrt(a2 * a2 + 4.0));
        let p = solve_are(&scalar(1.1, 1.0)).unwrap();
        assert_relative_eq!(p.matrix()[(0, 0)], p_exact, max_relative = 1e-13);
    }

    #[test]
    fn are_one_step_problem() {
        // A = 0, B = 0: P* = Q_xx − Q_xu Q_uu⁻¹ Q_ux
        let q = Matrix::from_row_slice(3, 3, &[2.0, 0.3, 0.5, 0.3, 1.0, 0.2, 0.5, 0.2, 1.5]);
        let pd = ProblemData::new(
            Matrix::zeros(2, 2),
            Matrix::zeros(2, 1),
            q.clone(),
            Matrix::zeros(2, 2),
        )
        .unwrap();
        let expected = pd.q_xx() - pd.q_xu() * pd.q_ux() / 1.5;
        let p = solve_are(&pd).unwrap();
        assert_relative_eq!(p.matrix(), &expected, epsilon = 1e-13);

        // with B ≠ 0 the input block picks up BᵀPB
        let pd = ProblemData::new(
            Matrix::zeros(2, 2),
            Matrix::from_row_slice(2, 1, &[1.0, 0.4]),
            q,
            Matrix::zeros(2, 2),
        )
        .unwrap();
        let p = solve_are(&pd).unwrap();
        let g = pd.q_uu() + pd.b().transpose() * p.matrix() * pd.b();
        let expected = pd.q_xx() - pd.q_xu() * pd.q_ux() / g[(0, 0)];
        assert_relative_eq!(p.matrix(), &expected, epsilon = 1e-13);
    }

    #[test]
    fn pi_fixed_point_at_optimum() {
        let pd = scalar(1.1, 1.0);
        let p_star = solve_are(&pd).unwrap();
        let k_star = gain_from_value(&pd, &p_star).unwrap();
        let (_, p, trace) = policy_iteration(&pd, &k_star, &SolverConfig::default()).unwrap();
        assert_eq!(trace.len(), 2);
        assert_relative_eq!(p.matrix(), p_star.matrix(), max_relative = 1e-12);
        let (_, p, trace) =
            midpoint_policy_iteration(&pd, &k_star, &SolverConfig::default()).unwrap();
        assert_eq!(trace.len(), 2);
        assert_relative_eq!(p.matrix(), p_star.matrix(), max_relative = 1e-12);
    }

    #[test]
    fn non_convergence_carries_trace() {
        let pd = scalar(1.1, 1.0);
        let cfg = SolverConfig {
            tolerance: 1e-300,
            max_iterations: 3,
            record_trace: true,
        };
        let k0 = Gain::new(Matrix::from_element(1, 1, -0.5)).unwrap();
        match policy_iteration(&pd, &k0, &cfg) {
            Err(SolveError::NonConvergence { trace, .. }) => assert_eq!(trace.len(), 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn order_of_constructed_sequences() {
        let quad: Vec<f64> = (0..6)
            .map(|k| libm::pow(1e-2, libm::pow(2.0, k as f64)))
            .collect();
        assert!((convergence_order(&quad).unwrap() - 2.0).abs() < 0.01);
        let cubic: Vec<f64> = (0..5)
            .map(|k| libm::pow(1e-1, libm::pow(3.0, k as f64)))
            .collect();
        assert!((convergence_order(&cubic).unwrap() - 3.0).abs() < 0.01);
    }

    #[test]
    fn order_needs_three_points() {
        assert_eq!(
            convergence_order(&[1e-2, 1e-4]),
            Err(Error::InsufficientData(2))
        );
        assert_eq!(
            convergence_order(&[1.0, 1e-20, 1e-30]),
            Err(Error::InsufficientData(0))
        );
        // stops at the first non-decrease
        assert_eq!(
            convergence_order(&[1e-2, 1e-3, 1e-2, 1e-5]),
            Err(Error::InsufficientData(2))
        );
    }
}
