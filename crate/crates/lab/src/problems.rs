//! Problem generators and initial-gain construction.

use lqr_mpi::exact::is_stabilizing;
use lqr_mpi::kernel::spectral_radius;
use lqr_mpi::{Error, Gain, Matrix, ProblemData};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StandardUniform};

use crate::metrics::Reference;

/// Initial gain of the inertial-mass experiment.
pub const MASS_K0: [f64; 2] = [-0.035, -2.087];

/// Process noise of generated random problems.
pub const RANDOM_NOISE: f64 = 1e-6;

/// Floor on the eigenvalues of generated penalties.
pub const PENALTY_FLOOR: f64 = 1e-6;

const NILPOTENT_REDRAWS: u64 = 16;
const BISECTION_STEPS: usize = 60;
const DIRECTION_DRAWS: u64 = 10;
const MAX_DOUBLINGS: usize = 200;

/// Forward-Euler discretization of a force-driven mass with white process noise.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MassParams {
    pub dt: f64,
    pub mass: f64,
    pub noise: f64,
    pub q_scale: f64,
}

impl Default for MassParams {
    fn default() -> Self {
        Self {
            dt: 0.01,
            mass: 1.0,
            noise: 0.01,
            q_scale: 1.0,
        }
    }
}

/// `A = [[1, Δt], [0, 1]]`, `B = [0; Δt/μ]`, `W = Δt·w_c·I₂`, `Q = q_scale·I₃`.
pub fn inertial_mass_problem(
    dt: f64,
    mu: f64,
    w_c: f64,
    q_scale: f64,
) -> Result<ProblemData, Error> {
    if !(dt > 0.0 && mu > 0.0 && w_c >= 0.0 && q_scale > 0.0) {
        return Err(Error::InvalidInput(format!(
            "need dt > 0, mu > 0, w_c >= 0, q_scale > 0 (got {dt}, {mu}, {w_c}, {q_scale})"
        )));
    }
    ProblemData::new(
        Matrix::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]),
        Matrix::from_row_slice(2, 1, &[0.0, dt / mu]),
        Matrix::identity(3, 3) * q_scale,
        Matrix::identity(2, 2) * (dt * w_c),
    )
}

pub fn mass_problem(p: &MassParams) -> Result<ProblemData, Error> {
    inertial_mass_problem(p.dt, p.mass, p.noise, p.q_scale)
}

pub fn mass_k0() -> Gain {
    Gain::new(Matrix::from_row_slice(1, 2, &MASS_K0)).expect("finite constant")
}

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

/// Random instance: Gaussian `A` scaled to `ρ(A) = ρ_target`, `B ~ U[0,1]`,
/// `Q = UΛUᵀ` with `U` orthogonal and `Λ ~ U[0,1]` floored at 1e-6,
/// `W = 1e-6·I`.
pub fn random_problem(
    n: usize,
    m: usize,
    rho_target: f64,
    seed: u64,
) -> Result<ProblemData, Error> {
    if n == 0 || m == 0 {
        return Err(Error::InvalidInput("n and m must be at least 1".into()));
    }
    if !(rho_target >= 0.0 && rho_target.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "rho_target {rho_target} must be finite and >= 0"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = gaussian(&mut rng, n, n);
    let mut rho = spectral_radius(&a)?;
    let mut redraw = 0;
    while rho == 0.0 && rho_target > 0.0 {
        redraw += 1;
        if redraw > NILPOTENT_REDRAWS {
            return Err(Error::Numerical("repeated nilpotent draws"));
        }
        let mut sub = ChaCha8Rng::seed_from_u64(seed);
        sub.set_stream(redraw);
        a = gaussian(&mut sub, n, n);
        rho = spectral_radius(&a)?;
    }
    let a = if rho_target == 0.0 {
        Matrix::zeros(n, n)
    } else {
        a * (rho_target / rho)
    };
    let b = Matrix::from_fn(n, m, |_, _| StandardUniform.sample(&mut rng));
    let d = n + m;
    let u = gaussian(&mut rng, d, d).qr().q();
    let lambda = Matrix::from_diagonal(&lqr_mpi::Vector::from_fn(d, |_, _| {
        let x: f64 = StandardUniform.sample(&mut rng);
        x.max(PENALTY_FLOOR)
    }));
    let q = &u * lambda * u.transpose();
    let q = (&q + q.transpose()) * 0.5;
    ProblemData::new(a, b, q, Matrix::identity(n, n) * RANDOM_NOISE)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GainSearchError {
    #[error("target relative error {0} must be positive and finite")]
    InvalidTarget(f64),
    #[error("no direction reached the target within {0} draws")]
    DirectionsExhausted(u64),
    #[error(transparent)]
    Solver(#[from] Error),
}

/// `K₀ = K* + s·D` with `D` a random unit-Frobenius direction and `s` found
/// by bisection so the relative value error of `K₀` is within 1% of
/// `target`.
pub fn perturbed_initial_gain(
    pd: &ProblemData,
    reference: &Reference,
    target: f64,
    seed: u64,
) -> Result<Gain, GainSearchError> {
    if !(target > 0.0 && target.is_finite()) {
        return Err(GainSearchError::InvalidTarget(target));
    }
    let k_star = reference.k_star().matrix().clone();
    let (m, n) = k_star.shape();
    let err_at = |d: &Matrix, s: f64| -> f64 {
        match Gain::new(&k_star + d * s) {
            Ok(k) => reference.relative_error(pd, &k),
            Err(_) => f64::INFINITY,
        }
    };
    for draw in 0..DIRECTION_DRAWS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(draw);
        let d = gaussian(&mut rng, m, n);
        let norm = d.norm();
        if norm == 0.0 {
            continue;
        }
        let d = d / norm;

        let mut lo = 0.0;
        let mut hi = 1e-6 * k_star.norm().max(1.0);
        let mut doublings = 0;
        while err_at(&d, hi) < target {
            lo = hi;
            hi *= 2.0;
            doublings += 1;
            if doublings > MAX_DOUBLINGS {
                break;
            }
        }
        if doublings > MAX_DOUBLINGS {
            continue;
        }
        for _ in 0..BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            let e = err_at(&d, mid);
            if (e - target).abs() <= 0.01 * target {
                let k = Gain::new(&k_star + &d * mid)?;
                if is_stabilizing(pd, &k) {
                    return Ok(k);
                }
            }
            if e < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    Err(GainSearchError::DirectionsExhausted(DIRECTION_DRAWS))
}

/// Convenience wrapper that solves the Riccati equation first.
pub fn perturbed_initial_gain_for(
    pd: &ProblemData,
    target: f64,
    seed: u64,
) -> Result<Gain, GainSearchError> {
    let reference = Reference::new(pd)?;
    perturbed_initial_gain(pd, &reference, target, seed)
}
