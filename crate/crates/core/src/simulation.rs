//! Seeded simulation of `x_{t+1} = A x_t + B u_t + w_t`.
//!
//! Randomness comes from ChaCha8 streams. A rollout is identified by a
//! master seed and a rollout index; its initial state, exploration inputs and
//! process noise each draw from their own stream derived from that pair.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::SymmetricEigen;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Error;
use crate::kernel::{self, symmetrize, SYMMETRY_TOL};
use crate::operators::{self, Gain, ProblemData, COVARIANCE_PSD_TOL};
use crate::{Matrix, Vector};

/// Rollouts abort once `‖x_t‖₂` exceeds this.
pub const STATE_BOUND: f64 = 1e9;

/// Name of the generator, recorded in experiment metadata.
pub const GENERATOR: &str = "ChaCha8 (rand_chacha 0.9), stream = 4*rollout_index + purpose";

/// Identifies the random streams of one rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RolloutSeed {
    pub master: u64,
    pub index: u64,
}

impl RolloutSeed {
    pub fn new(master: u64, index: u64) -> Self {
        Self { master, index }
    }

    fn stream(&self, purpose: StreamPurpose) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(self.index.wrapping_mul(4).wrapping_add(purpose as u64));
        rng
    }
}

#[derive(Clone, Copy)]
enum StreamPurpose {
    InitialState = 0,
    Exploration = 1,
    ProcessNoise = 2,
}

/// Zero-mean Gaussian sampler with a fixed covariance.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    covariance: Matrix,
    factor: Matrix,
    rng: ChaCha8Rng,
}

impl NoiseSampler {
    /// The factor is `V·diag(√λ⁺)` from the eigendecomposition, so singular
    /// (including zero) covariances are accepted.
    pub fn new(covariance: Matrix, rng: ChaCha8Rng) -> Result<Self, Error> {
        if !covariance.is_square() {
            return Err(Error::InvalidInput("covariance must be square".into()));
        }
        if covariance.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(
                "covariance has non-finite entries".into(),
            ));
        }
        if !kernel::is_symmetric(&covariance, SYMMETRY_TOL) {
            return Err(Error::InvalidInput("covariance must be symmetric".into()));
        }
        let covariance = symmetrize(&covariance);
        let eig = SymmetricEigen::new(covariance.clone());
        let min = eig
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min < -COVARIANCE_PSD_TOL {
            return Err(Error::InvalidInput(format!(
                "covariance must be positive semidefinite (min eigenvalue {min:e})"
            )));
        }
        let roots = eig.eigenvalues.map(|l| libm::sqrt(l.max(0.0)));
        let factor = &eig.eigenvectors * Matrix::from_diagonal(&roots);
        Ok(Self {
            covariance,
            factor,
            rng,
        })
    }

    pub fn from_seed(covariance: Matrix, seed: u64) -> Result<Self, Error> {
        Self::new(covariance, ChaCha8Rng::seed_from_u64(seed))
    }

    /// `σ² I_d`.
    pub fn isotropic(dim: usize, scale: f64, rng: ChaCha8Rng) -> Result<Self, Error> {
        Self::new(Matrix::identity(dim, dim) * (scale * scale), rng)
    }

    pub fn covariance(&self) -> &Matrix {
        &self.covariance
    }

    pub fn factor(&self) -> &Matrix {
        &self.factor
    }

    pub fn dim(&self) -> usize {
        self.covariance.nrows()
    }

    /// One draw. Always consumes `dim` normals so the stream position does
    /// not depend on the covariance.
    pub fn sample(&mut self) -> Vector {
        let z = Vector::from_fn(self.dim(), |_, _| StandardNormal.sample(&mut self.rng));
        &self.factor * z
    }
}

/// `A x + B u + w`.
pub fn dynamics_step(pd: &ProblemData, x: &Vector, u: &Vector, w: &Vector) -> Vector {
    pd.a() * x + pd.b() * u + w
}

/// Distributions of a rollout: `x₀ ~ 𝒩(0, initial_cov)`,
/// `u_explore ~ 𝒩(0, explore_scale² I_m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutConfig {
    /// Recorded pairs are `t = 0..=length`.
    pub length: usize,
    pub initial_cov: Matrix,
    pub explore_scale: f64,
}

impl RolloutConfig {
    /// Identity initial covariance and unit exploration.
    pub fn standard(n: usize, length: usize) -> Self {
        Self {
            length,
            initial_cov: Matrix::identity(n, n),
            explore_scale: 1.0,
        }
    }
}

/// Recorded trajectory `{x_t, u_t}` for `t = 0..=ℓ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub states: Vec<Vector>,
    pub inputs: Vec<Vector>,
    pub seed: RolloutSeed,
    pub gain: Gain,
    pub explore_scale: f64,
}

impl Rollout {
    /// Number of recorded state-input pairs (`ℓ + 1`).
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// The rollout truncated to `t = 0..=length`.
    pub fn prefix(&self, length: usize) -> Rollout {
        let end = (length + 1).min(self.len());
        Rollout {
            states: self.states[..end].to_vec(),
            inputs: self.inputs[..end].to_vec(),
            seed: self.seed,
            gain: self.gain.clone(),
            explore_scale: self.explore_scale,
        }
    }
}

/// Simulates the closed loop `u_t = K x_t + u_explore_t` and records
/// `(x_t, u_t)` for `t = 0..=ℓ`.
pub fn rollout(
    pd: &ProblemData,
    k_play: &Gain,
    cfg: &RolloutConfig,
    seed: RolloutSeed,
) -> Result<Rollout, Error> {
    let (n, m) = (pd.n(), pd.m());
    operators::check_gain(pd, k_play)?;
    if cfg.initial_cov.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "initial covariance must be {n}x{n}"
        )));
    }
    if !(cfg.explore_scale >= 0.0 && cfg.explore_scale.is_finite()) {
        return Err(Error::InvalidInput(
            "exploration scale must be finite and >= 0".into(),
        ));
    }
    let f = pd.a() + pd.b() * k_play.matrix();
    kernel::ensure_schur_stable(&f)?;

    let mut x0_dist = NoiseSampler::new(
        cfg.initial_cov.clone(),
        seed.stream(StreamPurpose::InitialState),
    )?;
    let mut explore = NoiseSampler::isotropic(
        m,
        cfg.explore_scale,
        seed.stream(StreamPurpose::Exploration),
    )?;
    let mut noise = NoiseSampler::new(pd.w().clone(), seed.stream(StreamPurpose::ProcessNoise))?;

    let mut states = Vec::with_capacity(cfg.length + 1);
    let mut inputs = Vec::with_capacity(cfg.length + 1);
    let mut x = x0_dist.sample();
    for t in 0..=cfg.length {
        let norm = x.norm();
        if !(norm <= STATE_BOUND) {
            return Err(Error::SimulationDivergence { step: t, norm });
        }
        let u = k_play.matrix() * &x + explore.sample();
        let w = noise.sample();
        let next = dynamics_step(pd, &x, &u, &w);
        states.push(x);
        inputs.push(u);
        x = next;
    }
    Ok(Rollout {
        states,
        inputs,
        seed,
        gain: k_play.clone(),
        explore_scale: cfg.explore_scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

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

    #[test]
    fn dynamics_examples() {
        let pd = mass();
        let z2 = Vector::zeros(2);
        assert_eq!(dynamics_step(&pd, &z2, &Vector::zeros(1), &z2), z2);
        let pd = ProblemData::new(
            Matrix::identity(2, 2),
            Matrix::zeros(2, 1),
            Matrix::identity(3, 3),
            Matrix::zeros(2, 2),
        )
        .unwrap();
        let x = Vector::from_vec(alloc::vec![0.3, -1.2]);
        assert_eq!(
            dynamics_step(&pd, &x, &Vector::from_element(1, 5.0), &z2),
            x
        );
    }

    #[test]
    fn zero_covariance_sampler() {
        let mut s = NoiseSampler::from_seed(Matrix::zeros(3, 3), 9).unwrap();
        for _ in 0..10 {
            assert_eq!(s.sample(), Vector::zeros(3));
        }
    }

    #[test]
    fn sampler_is_deterministic() {
        let cov = Matrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
        let mut a = NoiseSampler::from_seed(cov.clone(), 42).unwrap();
        let mut b = NoiseSampler::from_seed(cov, 42).unwrap();
        for _ in 0..100 {
            assert_eq!(a.sample(), b.sample());
        }
    }

    #[test]
    fn sampler_rejects_indefinite() {
        let cov = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.1]);
        assert!(NoiseSampler::from_seed(cov, 1).is_err());
    }

    #[test]
    fn sampler_factor_reproduces_covariance() {
        let g = Matrix::from_row_slice(3, 2, &[1.0, 0.5, -0.3, 1.0, 0.2, 0.0]);
        let cov = &g * g.transpose();
        let s = NoiseSampler::from_seed(cov.clone(), 0).unwrap();
        assert!((s.factor() * s.factor().transpose() - cov).norm() < 1e-10);
    }

    #[test]
    fn sample_covariance_close_to_target() {
        let cov = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 4.0]);
        let mut s = NoiseSampler::from_seed(cov.clone(), 7).unwrap();
        let draws = 100_000;
        let mut acc = Matrix::zeros(2, 2);
        for _ in 0..draws {
            let x = s.sample();
            acc += &x * x.transpose();
        }
        acc /= draws as f64;
        for i in 0..2 {
            assert!((acc[(i, i)] - cov[(i, i)]).abs() <= 0.05 * cov[(i, i)]);
        }
        assert!(acc[(0, 1)].abs() < 0.05);
    }

    #[test]
    fn silent_rollout_is_zero() {
        let pd = mass().with_noise(Matrix::zeros(2, 2)).unwrap();
        let cfg = RolloutConfig {
            length: 20,
            initial_cov: Matrix::zeros(2, 2),
            explore_scale: 0.0,
        };
        let r = rollout(&pd, &k0(), &cfg, RolloutSeed::new(3, 0)).unwrap();
        assert_eq!(r.len(), 21);
        assert!(r
            .states
            .iter()
            .chain(&r.inputs)
            .all(|v| v.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn rollout_determinism_and_streams() {
        let pd = mass();
        let cfg = RolloutConfig::standard(2, 300);
        let a = rollout(&pd, &k0(), &cfg, RolloutSeed::new(11, 0)).unwrap();
        let b = rollout(&pd, &k0(), &cfg, RolloutSeed::new(11, 0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 301);
        let c = rollout(&pd, &k0(), &cfg, RolloutSeed::new(11, 1)).unwrap();
        assert_ne!(a.states, c.states);
        // a prefix of a longer rollout is the shorter rollout
        let short = rollout(
            &pd,
            &k0(),
            &RolloutConfig::standard(2, 50),
            RolloutSeed::new(11, 0),
        )
        .unwrap();
        assert_eq!(a.prefix(50), short);
    }

    #[test]
    fn rollout_rejects_destabilizing_gain() {
        let pd = mass();
        let err = rollout(
            &pd,
            &Gain::zeros(1, 2),
            &RolloutConfig::standard(2, 10),
            RolloutSeed::new(0, 0),
        );
        assert!(matches!(err, Err(Error::Unstable { .. })));
    }

    #[test]
    fn recorded_transitions_recover_noise_covariance() {
        let pd = mass();
        let cfg = RolloutConfig::standard(2, 10_000);
        let r = rollout(&pd, &k0(), &cfg, RolloutSeed::new(5, 0)).unwrap();
        let mut acc = Matrix::zeros(2, 2);
        for t in 0..cfg.length {
            let w = &r.states[t + 1] - pd.a() * &r.states[t] - pd.b() * &r.inputs[t];
            acc += &w * w.transpose();
        }
        acc /= cfg.length as f64;
        assert!((acc - pd.w()).norm() <= 0.1 * pd.w().norm());
    }
}
