//! LQR problem data and the operators built on it: the gain operator, the
//! state-action value operator, the Riccati operator and its directional
//! derivative.
//!
//! Every matrix-valued output that should be symmetric is symmetrized
//! before it is returned.

use alloc::format;

use crate::error::Error;
use crate::kernel::{self, symmetrize, SYMMETRY_TOL};
use crate::Matrix;

/// Minimum eigenvalue accepted for the penalty `Q ≻ 0`.
pub const PENALTY_PD_TOL: f64 = 1e-12;
/// Most negative eigenvalue accepted for the noise covariance `W ≽ 0`.
pub const COVARIANCE_PSD_TOL: f64 = 1e-12;
/// Minimum |eigenvalue| of the input-input block for a gain to be defined.
pub const INVERTIBILITY_TOL: f64 = 1e-12;

/// `x_{t+1} = A x_t + B u_t + w_t`, stage cost `[x;u]ᵀ Q [x;u]`, `w_t ~ (0, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemData {
    a: Matrix,
    b: Matrix,
    q: Matrix,
    w: Matrix,
}

impl ProblemData {
    pub fn new(a: Matrix, b: Matrix, q: Matrix, w: Matrix) -> Result<Self, Error> {
        let n = a.nrows();
        if !a.is_square() || n == 0 {
            return Err(Error::DimensionMismatch(format!(
                "A must be square and non-empty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let m = b.ncols();
        if b.nrows() != n || m == 0 {
            return Err(Error::DimensionMismatch(format!(
                "B must be {n}xm with m >= 1, got {}x{}",
                b.nrows(),
                b.ncols()
            )));
        }
        if q.shape() != (n + m, n + m) {
            return Err(Error::DimensionMismatch(format!(
                "Q must be {0}x{0}, got {1}x{2}",
                n + m,
                q.nrows(),
                q.ncols()
            )));
        }
        if w.shape() != (n, n) {
            return Err(Error::DimensionMismatch(format!(
                "W must be {n}x{n}, got {}x{}",
                w.nrows(),
                w.ncols()
            )));
        }
        for (name, mat) in [("A", &a), ("B", &b), ("Q", &q), ("W", &w)] {
            if mat.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "{name} has non-finite entries"
                )));
            }
        }
        if !kernel::is_symmetric(&q, SYMMETRY_TOL) {
            return Err(Error::InvalidInput("Q must be symmetric".into()));
        }
        if !kernel::is_symmetric(&w, SYMMETRY_TOL) {
            return Err(Error::InvalidInput("W must be symmetric".into()));
        }
        let q = symmetrize(&q);
        let w = symmetrize(&w);
        let q_min = kernel::min_symmetric_eigenvalue(&q);
        if q_min <= PENALTY_PD_TOL {
            return Err(Error::InvalidInput(format!(
                "Q must be positive definite (min eigenvalue {q_min:e})"
            )));
        }
        let w_min = kernel::min_symmetric_eigenvalue(&w);
        if w_min < -COVARIANCE_PSD_TOL {
            return Err(Error::InvalidInput(format!(
                "W must be positive semidefinite (min eigenvalue {w_min:e})"
            )));
        }
        Ok(Self { a, b, q, w })
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Input dimension.
    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn w(&self) -> &Matrix {
        &self.w
    }

    pub fn q_xx(&self) -> Matrix {
        self.q.view((0, 0), (self.n(), self.n())).into_owned()
    }

    pub fn q_xu(&self) -> Matrix {
        self.q
            .view((0, self.n()), (self.n(), self.m()))
            .into_owned()
    }

    pub fn q_ux(&self) -> Matrix {
        self.q
            .view((self.n(), 0), (self.m(), self.n()))
            .into_owned()
    }

    pub fn q_uu(&self) -> Matrix {
        self.q
            .view((self.n(), self.n()), (self.m(), self.m()))
            .into_owned()
    }

    /// `[A B]`.
    pub fn transition(&self) -> Matrix {
        let (n, m) = (self.n(), self.m());
        let mut ab = Matrix::zeros(n, n + m);
        ab.view_mut((0, 0), (n, n)).copy_from(&self.a);
        ab.view_mut((0, n), (n, m)).copy_from(&self.b);
        ab
    }

    /// Same dynamics and penalty with a different noise covariance.
    pub fn with_noise(&self, w: Matrix) -> Result<Self, Error> {
        Self::new(self.a.clone(), self.b.clone(), self.q.clone(), w)
    }

    fn check_square(&self, what: &str, p: &Matrix) -> Result<(), Error> {
        if p.shape() != (self.n(), self.n()) {
            return Err(Error::DimensionMismatch(format!(
                "{what} must be {0}x{0}, got {1}x{2}",
                self.n(),
                p.nrows(),
                p.ncols()
            )));
        }
        Ok(())
    }

    fn check_gain(&self, k: &Gain) -> Result<(), Error> {
        if k.matrix().shape() != (self.m(), self.n()) {
            return Err(Error::DimensionMismatch(format!(
                "gain must be {}x{}, got {}x{}",
                self.m(),
                self.n(),
                k.matrix().nrows(),
                k.matrix().ncols()
            )));
        }
        Ok(())
    }
}

/// State feedback gain `K` with `u = K x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gain(Matrix);

impl Gain {
    pub fn new(k: Matrix) -> Result<Self, Error> {
        if k.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("gain has non-finite entries".into()));
        }
        Ok(Self(k))
    }

    pub fn zeros(m: usize, n: usize) -> Self {
        Self(Matrix::zeros(m, n))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_inner(self) -> Matrix {
        self.0
    }

    /// `[I; K]`, an `(n+m) × n` matrix.
    pub fn stacked(&self) -> Matrix {
        let (m, n) = self.0.shape();
        let mut s = Matrix::zeros(n + m, n);
        s.view_mut((0, 0), (n, n)).fill_with_identity();
        s.view_mut((n, 0), (m, n)).copy_from(&self.0);
        s
    }
}

/// Symmetric cost-to-go matrix `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueMatrix(Matrix);

impl ValueMatrix {
    pub fn new(p: Matrix) -> Result<Self, Error> {
        if !kernel::is_symmetric(&p, SYMMETRY_TOL) {
            return Err(Error::InvalidInput("value matrix must be symmetric".into()));
        }
        Ok(Self(symmetrize(&p)))
    }

    pub(crate) fn from_symmetric(p: Matrix) -> Self {
        Self(p)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_inner(self) -> Matrix {
        self.0
    }
}

/// Symmetric `(n+m) × (n+m)` state-action value matrix `H` with blocks
/// `H_xx`, `H_xu`, `H_ux`, `H_uu`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateActionValue {
    h: Matrix,
    n: usize,
}

impl StateActionValue {
    pub fn new(h: Matrix, n: usize) -> Result<Self, Error> {
        if !h.is_square() || h.nrows() <= n || n == 0 {
            return Err(Error::DimensionMismatch(format!(
                "state-action matrix {}x{} does not split with n = {n}",
                h.nrows(),
                h.ncols()
            )));
        }
        if h.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical("non-finite state-action matrix"));
        }
        if !kernel::is_symmetric(&h, SYMMETRY_TOL) {
            return Err(Error::InvalidInput(
                "state-action matrix must be symmetric".into(),
            ));
        }
        Ok(Self {
            h: symmetrize(&h),
            n,
        })
    }

    pub(crate) fn from_symmetric(h: Matrix, n: usize) -> Self {
        Self { h, n }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.h
    }

    pub fn into_inner(self) -> Matrix {
        self.h
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.h.nrows() - self.n
    }

    pub fn xx(&self) -> Matrix {
        self.h.view((0, 0), (self.n, self.n)).into_owned()
    }

    pub fn xu(&self) -> Matrix {
        self.h.view((0, self.n), (self.n, self.m())).into_owned()
    }

    pub fn ux(&self) -> Matrix {
        self.h.view((self.n, 0), (self.m(), self.n)).into_owned()
    }

    pub fn uu(&self) -> Matrix {
        self.h
            .view((self.n, self.n), (self.m(), self.m()))
            .into_owned()
    }

    /// `(H₁ + H₂) / 2`.
    pub fn midpoint(&self, other: &Self) -> Self {
        Self::from_symmetric((&self.h + &other.h) * 0.5, self.n)
    }
}

/// `H_uu⁻¹ X`, after checking `min |λ(H_uu)| > INVERTIBILITY_TOL`.
fn solve_uu(h_uu: &Matrix, rhs: &Matrix) -> Result<Matrix, Error> {
    let min_abs = kernel::symmetric_eigenvalues(h_uu)
        .iter()
        .map(|x| x.abs())
        .fold(f64::INFINITY, f64::min);
    if !(min_abs > INVERTIBILITY_TOL) {
        return Err(Error::SingularBlock {
            min_abs_eigenvalue: min_abs,
        });
    }
    h_uu.clone().lu().solve(rhs).ok_or(Error::SingularBlock {
        min_abs_eigenvalue: min_abs,
    })
}

/// `ℋ(P) = Q + [A B]ᵀ P [A B]`.
pub fn state_action_matrix(pd: &ProblemData, p: &ValueMatrix) -> Result<StateActionValue, Error> {
    state_action_matrix_with(pd, pd.q(), p.matrix())
}

/// `ℋ` with an arbitrary symmetric penalty in place of the problem's `Q`.
pub(crate) fn state_action_matrix_with(
    pd: &ProblemData,
    penalty: &Matrix,
    p: &Matrix,
) -> Result<StateActionValue, Error> {
    pd.check_square("P", p)?;
    let ab = pd.transition();
    let h = penalty + ab.transpose() * p * &ab;
    Ok(StateActionValue::from_symmetric(symmetrize(&h), pd.n()))
}

/// `𝒦(P) = −(Q_uu + BᵀPB)⁻¹ (Q_ux + BᵀPA)`.
pub fn gain_from_value(pd: &ProblemData, p: &ValueMatrix) -> Result<Gain, Error> {
    pd.check_square("P", p.matrix())?;
    let bt_p = pd.b().transpose() * p.matrix();
    let h_uu = symmetrize(&(pd.q_uu() + &bt_p * pd.b()));
    let h_ux = pd.q_ux() + &bt_p * pd.a();
    Gain::new(-solve_uu(&h_uu, &h_ux)?)
}

/// `K = −H_uu⁻¹ H_ux`.
pub fn gain_from_q(h: &StateActionValue) -> Result<Gain, Error> {
    Gain::new(-solve_uu(&h.uu(), &h.ux())?)
}

/// `ℛ(P) = −P + H_xx − H_xu H_uu⁻¹ H_ux` with `H = ℋ(P)`.
pub fn riccati_residual(pd: &ProblemData, p: &ValueMatrix) -> Result<Matrix, Error> {
    let h = state_action_matrix(pd, p)?;
    let r = h.xx() - h.xu() * solve_uu(&h.uu(), &h.ux())? - p.matrix();
    Ok(symmetrize(&r))
}

/// Directional derivative of `ℛ` at `point` in `direction`:
/// `ℛ′(P, X) = −X + (A + BK)ᵀ X (A + BK)` with `K = 𝒦(P)`.
pub fn riccati_directional_derivative(
    pd: &ProblemData,
    point: &ValueMatrix,
    direction: &Matrix,
) -> Result<Matrix, Error> {
    pd.check_square("direction", direction)?;
    let k = gain_from_value(pd, point)?;
    let f = pd.a() + pd.b() * k.matrix();
    Ok(symmetrize(&(f.transpose() * direction * &f - direction)))
}

/// Same derivative, assembled term by term from the product rule:
///
/// `−X + AᵀXA − AᵀXB G⁻¹N − NᵀG⁻¹BᵀXA + NᵀG⁻¹BᵀXB G⁻¹N`
///
/// with `G = Q_uu + BᵀPB` and `N = Q_ux + BᵀPA`.
pub fn riccati_directional_derivative_expanded(
    pd: &ProblemData,
    point: &ValueMatrix,
    direction: &Matrix,
) -> Result<Matrix, Error> {
    pd.check_square("P", point.matrix())?;
    pd.check_square("direction", direction)?;
    let (a, b, p, x) = (pd.a(), pd.b(), point.matrix(), direction);
    let g = symmetrize(&(pd.q_uu() + b.transpose() * p * b));
    let nmat = pd.q_ux() + b.transpose() * p * a;
    let g_inv_n = solve_uu(&g, &nmat)?;
    let at_x_b = a.transpose() * x * b;
    let d =
        -x + a.transpose() * x * a - &at_x_b * &g_inv_n - g_inv_n.transpose() * at_x_b.transpose()
            + g_inv_n.transpose() * (b.transpose() * x * b) * &g_inv_n;
    Ok(symmetrize(&d))
}

/// `[I; K]ᵀ M [I; K]` for an `(n+m) × (n+m)` matrix `M`.
pub fn closed_loop_penalty(penalty: &Matrix, k: &Gain) -> Matrix {
    let s = k.stacked();
    symmetrize(&(s.transpose() * penalty * &s))
}

/// `(A + BK, [I; K]ᵀ Q [I; K])`.
pub fn closed_loop_pair(pd: &ProblemData, k: &Gain) -> Result<(Matrix, Matrix), Error> {
    pd.check_gain(k)?;
    let f = pd.a() + pd.b() * k.matrix();
    Ok((f, closed_loop_penalty(pd.q(), k)))
}

pub(crate) fn check_gain(pd: &ProblemData, k: &Gain) -> Result<(), Error> {
    pd.check_gain(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar_problem(a: f64, b: f64, qxx: f64, quu: f64) -> ProblemData {
        ProblemData::new(
            Matrix::from_element(1, 1, a),
            Matrix::from_element(1, 1, b),
            Matrix::from_row_slice(2, 2, &[qxx, 0.0, 0.0, quu]),
            Matrix::zeros(1, 1),
        )
        .unwrap()
    }

    #[test]
    fn problem_validation() {
        let a = Matrix::identity(2, 2);
        let b = Matrix::zeros(2, 1);
        assert!(ProblemData::new(
            a.clone(),
            b.clone(),
            Matrix::identity(3, 3),
            Matrix::zeros(2, 2)
        )
        .is_ok());
        // Q singular
        let mut q = Matrix::identity(3, 3);
        q[(2, 2)] = 0.0;
        assert!(ProblemData::new(a.clone(), b.clone(), q, Matrix::zeros(2, 2)).is_err());
        // W indefinite
        let w = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-6]);
        assert!(ProblemData::new(a.clone(), b.clone(), Matrix::identity(3, 3), w).is_err());
        // wrong Q size
        assert!(matches!(
            ProblemData::new(a, b, Matrix::identity(2, 2), Matrix::zeros(2, 2)),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn state_action_zero_value_is_penalty() {
        let pd = scalar_problem(0.7, 0.3, 2.0, 1.5);
        let h = state_action_matrix(&pd, &ValueMatrix::new(Matrix::zeros(1, 1)).unwrap()).unwrap();
        assert_eq!(h.matrix(), pd.q());
    }

    #[test]
    fn state_action_identity_dynamics() {
        let pd = ProblemData::new(
            Matrix::identity(2, 2),
            Matrix::zeros(2, 1),
            Matrix::identity(3, 3),
            Matrix::zeros(2, 2),
        )
        .unwrap();
        let h =
            state_action_matrix(&pd, &ValueMatrix::new(Matrix::identity(2, 2)).unwrap()).unwrap();
        assert_eq!(h.xx(), Matrix::identity(2, 2) * 2.0);
        assert_eq!(h.uu(), Matrix::identity(1, 1));
        assert_eq!(h.xu(), Matrix::zeros(2, 1));
    }

    #[test]
    fn gain_examples() {
        // A = 0 and Q_ux = 0: numerator vanishes
        let pd = scalar_problem(0.0, 1.0, 1.0, 1.0);
        let k = gain_from_value(
            &pd,
            &ValueMatrix::new(Matrix::from_element(1, 1, 3.0)).unwrap(),
        )
        .unwrap();
        assert_eq!(k.matrix()[(0, 0)], 0.0);
        // K = −(1 + 2)⁻¹ (0 + 2) = −2/3
        let pd = scalar_problem(1.0, 1.0, 1.0, 1.0);
        let k = gain_from_value(
            &pd,
            &ValueMatrix::new(Matrix::from_element(1, 1, 2.0)).unwrap(),
        )
        .unwrap();
        assert_relative_eq!(k.matrix()[(0, 0)], -2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn gain_from_q_examples() {
        let h = StateActionValue::new(Matrix::identity(3, 3), 2).unwrap();
        assert_eq!(gain_from_q(&h).unwrap().matrix(), &Matrix::zeros(1, 2));
        let h = StateActionValue::new(
            Matrix::from_row_slice(3, 3, &[5.0, 0.0, 1.0, 0.0, 5.0, 0.0, 1.0, 0.0, 2.0]),
            2,
        )
        .unwrap();
        assert_eq!(
            gain_from_q(&h).unwrap().matrix(),
            &Matrix::from_row_slice(1, 2, &[-0.5, 0.0])
        );
    }

    #[test]
    fn gain_from_q_singular_block() {
        let mut h = Matrix::identity(3, 3);
        h[(2, 2)] = 1e-14;
        let h = StateActionValue::new(h, 2).unwrap();
        assert!(matches!(gain_from_q(&h), Err(Error::SingularBlock { .. })));
    }

    #[test]
    fn riccati_residual_scalar() {
        // a = 0: ℛ(P) = −P + q_xx, zero at P = 1.
        let pd = scalar_problem(0.0, 1.0, 1.0, 1.0);
        let r = riccati_residual(
            &pd,
            &ValueMatrix::new(Matrix::from_element(1, 1, 1.0)).unwrap(),
        )
        .unwrap();
        assert_eq!(r[(0, 0)], 0.0);
        // a = b = 1, P = 2: −2 + (1 + 2) − 2·2/(1 + 2) = −1/3
        let pd = scalar_problem(1.0, 1.0, 1.0, 1.0);
        let r = riccati_residual(
            &pd,
            &ValueMatrix::new(Matrix::from_element(1, 1, 2.0)).unwrap(),
        )
        .unwrap();
        assert_relative_eq!(r[(0, 0)], -1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn derivative_zero_direction() {
        let pd = scalar_problem(0.9, 0.5, 1.0, 2.0);
        let p = ValueMatrix::new(Matrix::from_element(1, 1, 1.7)).unwrap();
        let d = riccati_directional_derivative(&pd, &p, &Matrix::zeros(1, 1)).unwrap();
        assert_eq!(d[(0, 0)], 0.0);
    }

    #[test]
    fn closed_loop_zero_gain() {
        let pd = ProblemData::new(
            Matrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]),
            Matrix::from_row_slice(2, 1, &[0.0, 0.1]),
            Matrix::from_row_slice(3, 3, &[2.0, 0.1, 0.2, 0.1, 3.0, 0.0, 0.2, 0.0, 1.0]),
            Matrix::zeros(2, 2),
        )
        .unwrap();
        let (f, s) = closed_loop_pair(&pd, &Gain::zeros(1, 2)).unwrap();
        assert_eq!(&f, pd.a());
        assert_eq!(s, pd.q_xx());
        assert!(closed_loop_pair(&pd, &Gain::zeros(2, 2)).is_err());
    }
}
