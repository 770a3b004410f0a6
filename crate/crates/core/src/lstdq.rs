//! Least-squares temporal difference estimation of state-action value
//! matrices (LSTDQ).
//!
//! For a rollout `{x_t, u_t}`, an evaluation gain `K` and a penalty `Q_eff`,
//! the estimate solves
//!
//! ```text
//! Σ_t φ(z_t) (φ(z_t) − φ(v_{t+1}) + ψ)ᵀ θ = Σ_t φ(z_t) z_tᵀ Q_eff z_t
//! ```
//!
//! with `z_t = [x_t; u_t]`, `v_t = [x_t; K x_t]`, `φ(z) = svec(zzᵀ)` and
//! `ψ = svec([I; K] W [I; K]ᵀ)`, summing over `t = 0..ℓ−1`. Then `Ĥ = smat(θ)`.

use alloc::format;

use crate::error::Error;
use crate::kernel::{self, smat, svec_len, symmetrize, SYMMETRY_TOL};
use crate::operators::{Gain, StateActionValue, COVARIANCE_PSD_TOL};
use crate::simulation::Rollout;
use crate::{Matrix, Vector};

/// `svec(zzᵀ)`.
pub fn feature_map(z: &Vector) -> Vector {
    let d = z.len();
    let mut out = Vector::zeros(svec_len(d));
    let mut idx = 0;
    for j in 0..d {
        for i in 0..=j {
            out[idx] = if i == j {
                z[i] * z[i]
            } else {
                core::f64::consts::SQRT_2 * z[i] * z[j]
            };
            idx += 1;
        }
    }
    out
}

/// `svec([I; K] W [I; K]ᵀ)`.
pub fn noise_feature(k_eval: &Gain, w: &Matrix) -> Result<Vector, Error> {
    let s = k_eval.stacked();
    if w.shape() != (s.ncols(), s.ncols()) {
        return Err(Error::DimensionMismatch(format!(
            "noise covariance must be {0}x{0}",
            s.ncols()
        )));
    }
    if !kernel::is_symmetric(w, SYMMETRY_TOL) {
        return Err(Error::InvalidInput(
            "noise covariance must be symmetric".into(),
        ));
    }
    if kernel::min_symmetric_eigenvalue(w) < -COVARIANCE_PSD_TOL {
        return Err(Error::InvalidInput(
            "noise covariance must be positive semidefinite".into(),
        ));
    }
    Ok(kernel::svec_unchecked(&(&s * w * s.transpose())))
}

/// Inputs of one LSTDQ estimate.
#[derive(Debug, Clone, Copy)]
pub struct LstdqInput<'a> {
    pub rollout: &'a Rollout,
    /// Evaluation policy; need not be the gain that generated the rollout.
    pub k_eval: &'a Gain,
    /// Cost penalty. Symmetric, not necessarily definite.
    pub q_eff: &'a Matrix,
    pub w: &'a Matrix,
    pub rcond: f64,
}

/// Gram matrix `G` and right-hand side `b` of the LSTDQ system.
pub fn lstdq_system(inp: &LstdqInput<'_>) -> Result<(Matrix, Vector), Error> {
    let r = inp.rollout;
    let n = inp.k_eval.matrix().ncols();
    let m = inp.k_eval.matrix().nrows();
    let d = n + m;
    if r.states.len() != r.inputs.len() {
        return Err(Error::DimensionMismatch(
            "rollout states and inputs differ in length".into(),
        ));
    }
    if r.states.len() < 2 {
        return Err(Error::InsufficientData(r.states.len()));
    }
    if r.states.iter().any(|x| x.len() != n) || r.inputs.iter().any(|u| u.len() != m) {
        return Err(Error::DimensionMismatch(format!(
            "rollout does not match a {m}x{n} evaluation gain"
        )));
    }
    if inp.q_eff.shape() != (d, d) {
        return Err(Error::DimensionMismatch(format!("penalty must be {d}x{d}")));
    }
    if !kernel::is_symmetric(inp.q_eff, SYMMETRY_TOL) {
        return Err(Error::InvalidInput("penalty must be symmetric".into()));
    }
    let psi = noise_feature(inp.k_eval, inp.w)?;
    let q = symmetrize(inp.q_eff);

    let p = svec_len(d);
    let mut g = Matrix::zeros(p, p);
    let mut b = Vector::zeros(p);
    let mut z = Vector::zeros(d);
    let mut v = Vector::zeros(d);
    let mut any_nonzero = false;
    for t in 0..r.states.len() - 1 {
        z.rows_mut(0, n).copy_from(&r.states[t]);
        z.rows_mut(n, m).copy_from(&r.inputs[t]);
        let x_next = &r.states[t + 1];
        v.rows_mut(0, n).copy_from(x_next);
        v.rows_mut(n, m).copy_from(&(inp.k_eval.matrix() * x_next));

        let phi = feature_map(&z);
        any_nonzero |= phi.iter().any(|&x| x != 0.0);
        let c = z.dot(&(&q * &z));
        let target = &phi - feature_map(&v) + &psi;
        g.ger(1.0, &phi, &target, 1.0);
        b.axpy(c, &phi, 1.0);
    }
    if g.iter().chain(b.iter()).any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite LSTDQ accumulation"));
    }
    if !any_nonzero {
        return Err(Error::DegenerateData("all features are zero"));
    }
    Ok((g, b))
}

/// `Ĥ = smat(G^† b)`, symmetrized.
///
/// Rollouts shorter than the feature dimension give a rank-deficient Gram
/// matrix; the minimum-norm solution is returned.
pub fn lstdq(inp: &LstdqInput<'_>) -> Result<StateActionValue, Error> {
    let (g, b) = lstdq_system(inp)?;
    let theta = kernel::pseudo_inverse(&g, inp.rcond)? * b;
    let h = symmetrize(&smat(&theta)?);
    if h.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite LSTDQ estimate"));
    }
    StateActionValue::new(h, inp.k_eval.matrix().ncols())
}
