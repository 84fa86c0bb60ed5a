//! Seeded Gaussian perturbation neighborhoods `N(x, σ²I)`.
//!
//! The stream is pinned so that other implementations can reproduce it:
//!
//! * generator: xoshiro256++ with its 256-bit state filled by SplitMix64 from
//!   the 64-bit seed (`Xoshiro256PlusPlus::seed_from_u64`);
//! * uniforms: `u1 = ((next >> 11) + 1) · 2⁻⁵³ ∈ (0, 1]`,
//!   `u2 = (next >> 11) · 2⁻⁵³ ∈ [0, 1)`;
//! * normals: Box–Muller, `r = √(−2 ln u1)`, emitting `r cos 2πu2` then
//!   `r sin 2πu2`.
//!
//! Perturbation matrices are filled row by row from a single stream.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use thiserror::Error;

use crate::linalg::Matrix;

const TWO_POW_NEG_53: f64 = 1.0 / (1u64 << 53) as f64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("variance must be positive and finite, got {0}")]
    Variance(f64),
    #[error("perturbation count must be at least 1")]
    EmptyCount,
    #[error("center has a non-finite entry at index {0}")]
    NonFiniteCenter(usize),
}

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent seed for a work item addressed by `path`, e.g.
/// `(lane, instance, grid index, repetition)`.
///
/// `h₀ = mix64(base)`, `hₖ₊₁ = mix64(hₖ ⊕ mix64(pₖ + 0x9E3779B97F4A7C15))`.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix64(base), |h, &p| {
        mix64(h ^ mix64(p.wrapping_add(0x9E37_79B9_7F4A_7C15)))
    })
}

/// The pinned uniform generator.
pub fn seeded_rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// Deterministic standard normal stream.
#[derive(Debug, Clone)]
pub struct NormalStream {
    rng: Xoshiro256PlusPlus,
    spare: Option<f64>,
}

impl NormalStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: seeded_rng(seed),
            spare: None,
        }
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = ((self.rng.next_u64() >> 11) + 1) as f64 * TWO_POW_NEG_53;
        let u2 = (self.rng.next_u64() >> 11) as f64 * TWO_POW_NEG_53;
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }

    pub fn fill(&mut self, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = self.next_normal());
    }
}

impl Iterator for NormalStream {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        Some(self.next_normal())
    }
}

pub fn standard_normal_stream(seed: u64) -> NormalStream {
    NormalStream::new(seed)
}

/// Center, isotropic variance, sample count and seed of a perturbation
/// neighborhood.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationConfig {
    center: Vec<f64>,
    variance: f64,
    count: usize,
    seed: u64,
}

impl PerturbationConfig {
    pub fn new(center: Vec<f64>, variance: f64, count: usize, seed: u64) -> Result<Self, ConfigError> {
        if !(variance > 0.0) || !variance.is_finite() {
            return Err(ConfigError::Variance(variance));
        }
        if count == 0 {
            return Err(ConfigError::EmptyCount);
        }
        if let Some(i) = center.iter().position(|v| !v.is_finite()) {
            return Err(ConfigError::NonFiniteCenter(i));
        }
        Ok(Self {
            center,
            variance,
            count,
            seed,
        })
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_count(mut self, count: usize) -> Result<Self, ConfigError> {
        if count == 0 {
            return Err(ConfigError::EmptyCount);
        }
        self.count = count;
        Ok(self)
    }

    pub fn with_center(self, center: Vec<f64>) -> Result<Self, ConfigError> {
        Self::new(center, self.variance, self.count, self.seed)
    }
}

/// `count × d` matrix whose rows are `center + σ·z`.
pub fn gaussian_perturbations(cfg: &PerturbationConfig) -> Matrix {
    let d = cfg.dim();
    let sigma = cfg.std_dev();
    let mut stream = NormalStream::new(cfg.seed);
    let mut out = Matrix::zeros(cfg.count, d);
    for i in 0..cfg.count {
        for (v, &c) in out.row_mut(i).iter_mut().zip(&cfg.center) {
            *v = c + sigma * stream.next_normal();
        }
    }
    out
}
