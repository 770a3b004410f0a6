//! Small dense matrix utilities shared by every solver.
//!
//! All routines are pure functions over borrowed matrices. Sizes here are
//! tiny (state dimension up to ~8, feature dimension up to ~45), so direct
//! dense factorizations are used throughout.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{Schur, SymmetricEigen};

use crate::error::Error;
use crate::{Matrix, Vector};

/// Relative Frobenius tolerance for accepting a matrix as symmetric.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Required margin below one for the spectral radius of a Lyapunov operand.
pub const STABILITY_MARGIN: f64 = 1e-9;
/// Default relative singular value cutoff for [`pseudo_inverse`].
pub const DEFAULT_RCOND: f64 = 1e-13;

const SCHUR_MAX_ITER: usize = 10_000;

/// `(M + Mᵀ) / 2`.
pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Largest singular value.
pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    singular_pairs(m).eigenvalues.max().max(0.0)
}

/// Eigendecomposition of `[0 M; Mᵀ 0]`. Each singular triplet `(σ, u, v)`
/// of `M` appears as the eigenpair `(σ, [u; v]/√2)`.
fn singular_pairs(m: &Matrix) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let (r, c) = m.shape();
    let mut aug = Matrix::zeros(r + c, r + c);
    aug.view_mut((0, r), (r, c)).copy_from(m);
    aug.view_mut((r, 0), (c, r)).copy_from(&m.transpose());
    SymmetricEigen::new(aug)
}

pub fn is_symmetric(m: &Matrix, rel_tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).norm() <= rel_tol * m.norm()
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn symmetric_eigenvalues(m: &Matrix) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn min_symmetric_eigenvalue(m: &Matrix) -> f64 {
    symmetric_eigenvalues(m).first().copied().unwrap_or(0.0)
}

/// Length of the symmetric vectorization of a `d × d` matrix.
pub const fn svec_len(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Inverse of [`svec_len`], if `len` is a triangular number.
pub fn svec_dim(len: usize) -> Option<usize> {
    let mut d = 0;
    while svec_len(d) < len {
        d += 1;
    }
    (svec_len(d) == len).then_some(d)
}

/// Symmetric vectorization: column-major stacking of the upper triangle with
/// off-diagonal entries scaled by √2, so that `svec(A)·svec(B) = ⟨A, B⟩_F`.
pub fn svec(m: &Matrix) -> Result<Vector, Error> {
    if !m.is_square() {
        return Err(Error::InvalidInput(format!(
            "svec needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if !is_symmetric(m, SYMMETRY_TOL) {
        return Err(Error::InvalidInput("svec needs a symmetric matrix".into()));
    }
    Ok(svec_unchecked(m))
}

/// [`svec`] without the symmetry check; reads the averaged off-diagonal pair.
pub(crate) fn svec_unchecked(m: &Matrix) -> Vector {
    let d = m.nrows();
    let mut out = Vector::zeros(svec_len(d));
    let mut idx = 0;
    for j in 0..d {
        for i in 0..=j {
            out[idx] = if i == j {
                m[(i, i)]
            } else {
                core::f64::consts::SQRT_2 * 0.5 * (m[(i, j)] + m[(j, i)])
            };
            idx += 1;
        }
    }
    out
}

/// Inverse of [`svec`].
pub fn smat(v: &Vector) -> Result<Matrix, Error> {
    let d = svec_dim(v.len()).ok_or_else(|| {
        Error::InvalidInput(format!("length {} is not a triangular number", v.len()))
    })?;
    let mut m = Matrix::zeros(d, d);
    let mut idx = 0;
    for j in 0..d {
        for i in 0..=j {
            if i == j {
                m[(i, i)] = v[idx];
            } else {
                let x = v[idx] / core::f64::consts::SQRT_2;
                m[(i, j)] = x;
                m[(j, i)] = x;
            }
            idx += 1;
        }
    }
    Ok(m)
}

/// Largest eigenvalue magnitude, from a real Schur decomposition.
pub fn spectral_radius(m: &Matrix) -> Result<f64, Error> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "spectral radius of a {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("non-finite matrix entry".into()));
    }
    if m.is_empty() {
        return Ok(0.0);
    }
    let schur = Schur::try_new(m.clone(), f64::EPSILON, SCHUR_MAX_ITER)
        .ok_or(Error::Numerical("Schur decomposition did not converge"))?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| libm::hypot(z.re, z.im))
        .fold(0.0, f64::max))
}

/// Errors with [`Error::Unstable`] unless `ρ(f) < 1 − STABILITY_MARGIN`.
pub fn ensure_schur_stable(f: &Matrix) -> Result<f64, Error> {
    let rho = spectral_radius(f)?;
    if rho < 1.0 - STABILITY_MARGIN {
        Ok(rho)
    } else {
        Err(Error::Unstable {
            spectral_radius: rho,
        })
    }
}

/// Solves `X = Fᵀ X F + S` for Schur-stable `F`.
///
/// Uses the Kronecker form `(I − Fᵀ⊗Fᵀ) vec(X) = vec(S)` with one step of
/// iterative refinement, then symmetrizes.
pub fn dlyap(f: &Matrix, s: &Matrix) -> Result<Matrix, Error> {
    let n = f.nrows();
    if !f.is_square() || s.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "dlyap with F {}x{} and S {}x{}",
            f.nrows(),
            f.ncols(),
            s.nrows(),
            s.ncols()
        )));
    }
    if !is_symmetric(s, SYMMETRY_TOL) {
        return Err(Error::InvalidInput("dlyap needs a symmetric S".into()));
    }
    ensure_schur_stable(f)?;

    let ft = f.transpose();
    let system = Matrix::identity(n * n, n * n) - ft.kronecker(&ft);
    let lu = system.clone().lu();
    let rhs = Vector::from_column_slice(s.as_slice());
    let mut x = lu
        .solve(&rhs)
        .ok_or(Error::Numerical("singular Lyapunov system"))?;
    // One refinement step against the unsymmetrized residual.
    let residual = &rhs - &system * &x;
    if let Some(dx) = lu.solve(&residual) {
        x += dx;
    }
    let x = Matrix::from_column_slice(n, n, x.as_slice());
    let x = symmetrize(&x);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite Lyapunov solution"));
    }
    Ok(x)
}

/// `‖X − FᵀXF − S‖_F`.
pub fn dlyap_residual(f: &Matrix, s: &Matrix, x: &Matrix) -> f64 {
    (x - f.transpose() * x * f - s).norm()
}

/// Moore–Penrose pseudoinverse. Singular values below `rcond · σ_max` are
/// treated as zero.
pub fn pseudo_inverse(m: &Matrix, rcond: f64) -> Result<Matrix, Error> {
    if !(rcond > 0.0 && rcond < 1.0) {
        return Err(Error::InvalidInput(format!("rcond {rcond} outside (0, 1)")));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("non-finite matrix entry".into()));
    }
    let (r, c) = m.shape();
    if m.is_empty() {
        return Ok(Matrix::zeros(c, r));
    }
    let eig = singular_pairs(m);
    let sigma_max = eig.eigenvalues.max();
    let mut out = Matrix::zeros(c, r);
    if !(sigma_max > 0.0) {
        return Ok(out);
    }
    let cutoff = rcond * sigma_max;
    for (k, &s) in eig.eigenvalues.iter().enumerate() {
        if s > cutoff {
            let e = eig.eigenvectors.column(k);
            out += e.rows(r, c) * e.rows(0, r).transpose() * (2.0 / s);
        }
    }
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite pseudoinverse"));
    }
    Ok(out)
}
