//! Relative value error `‖V(K) − P*‖₂ / Tr(P*)`.

use lqr_mpi::exact::{is_stabilizing, relative_deviation};
use lqr_mpi::kernel::{dlyap, spectral_norm, symmetrize};
use lqr_mpi::operators::{gain_from_value, state_action_matrix};
use lqr_mpi::{policy_evaluation, solve_are, Error, Gain, Matrix, ProblemData, ValueMatrix};

/// Riccati solution of a problem together with what the metric needs.
#[derive(Debug, Clone)]
pub struct Reference {
    p_star: ValueMatrix,
    k_star: Gain,
    h_uu: Matrix,
    trace: f64,
}

impl Reference {
    pub fn new(pd: &ProblemData) -> Result<Self, Error> {
        Self::from_solution(pd, solve_are(pd)?)
    }

    pub fn from_solution(pd: &ProblemData, p_star: ValueMatrix) -> Result<Self, Error> {
        let k_star = gain_from_value(pd, &p_star)?;
        let h_uu = state_action_matrix(pd, &p_star)?.uu();
        let trace = p_star.matrix().trace();
        if !(trace > 0.0) {
            return Err(Error::InvalidInput(
                "Riccati solution must be positive definite".into(),
            ));
        }
        Ok(Self {
            p_star,
            k_star,
            h_uu,
            trace,
        })
    }

    pub fn p_star(&self) -> &ValueMatrix {
        &self.p_star
    }

    pub fn k_star(&self) -> &Gain {
        &self.k_star
    }

    /// Relative value error of `k`, `+∞` when `k` is not stabilizing.
    ///
    /// Uses `V(K) − P* = dlyap(A+BK, (K−K*)ᵀ H*_uu (K−K*))` with
    /// `H* = ℋ(P*)`, which avoids subtracting two nearly equal Lyapunov
    /// solutions.
    pub fn relative_error(&self, pd: &ProblemData, k: &Gain) -> f64 {
        if !is_stabilizing(pd, k) {
            return f64::INFINITY;
        }
        let d = k.matrix() - self.k_star.matrix();
        let f = pd.a() + pd.b() * k.matrix();
        let s = symmetrize(&(d.transpose() * &self.h_uu * &d));
        match dlyap(&f, &s) {
            Ok(gap) => spectral_norm(&gap) / self.trace,
            Err(_) => f64::INFINITY,
        }
    }

    /// Same quantity from `policy_evaluation(K) − P*` directly.
    pub fn direct_relative_error(&self, pd: &ProblemData, k: &Gain) -> f64 {
        match policy_evaluation(pd, k) {
            Ok(p) => relative_deviation(p.matrix(), &self.p_star),
            Err(_) => f64::INFINITY,
        }
    }

    /// `‖P − P*‖₂ / Tr(P*)` for an arbitrary symmetric iterate.
    pub fn value_error(&self, p: &Matrix) -> f64 {
        relative_deviation(p, &self.p_star)
    }
}

/// `‖V(K) − P*‖₂ / Tr(P*)`, or `+∞` for a destabilizing `K`.
pub fn relative_value_error(
    pd: &ProblemData,
    k: &Gain,
    p_star: &ValueMatrix,
) -> Result<f64, Error> {
    Ok(Reference::from_solution(pd, p_star.clone())?.relative_error(pd, k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{mass_k0, mass_problem, random_problem, MassParams};

    #[test]
    fn optimum_scores_zero() {
        let pd = mass_problem(&MassParams::default()).unwrap();
        let r = Reference::new(&pd).unwrap();
        assert!(r.relative_error(&pd, r.k_star()) <= 1e-12);
    }

    #[test]
    fn destabilizing_gain_scores_infinity() {
        let pd = mass_problem(&MassParams::default()).unwrap();
        let r = Reference::new(&pd).unwrap();
        assert_eq!(r.relative_error(&pd, &Gain::zeros(1, 2)), f64::INFINITY);
        assert_eq!(
            r.direct_relative_error(&pd, &Gain::zeros(1, 2)),
            f64::INFINITY
        );
    }

    #[test]
    fn mass_initial_gain_error_is_ten() {
        let pd = mass_problem(&MassParams::default()).unwrap();
        let e = relative_value_error(&pd, &mass_k0(), &solve_are(&pd).unwrap()).unwrap();
        assert!((e - 10.0).abs() <= 0.1, "{e}");
    }

    #[test]
    fn identity_route_matches_direct_route() {
        for seed in 0..20 {
            let pd = random_problem(3, 2, 0.8, seed).unwrap();
            let r = Reference::new(&pd).unwrap();
            let k = Gain::new(r.k_star().matrix().map(|x| x * 1.05 + 0.01)).unwrap();
            let a = r.relative_error(&pd, &k);
            let b = r.direct_relative_error(&pd, &k);
            assert!((a - b).abs() <= 1e-8 * a.max(1e-6), "{a} vs {b}");
        }
    }
}
