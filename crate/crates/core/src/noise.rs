//! Symmetric alpha-stable increments.
//!
//! The process `L` has characteristic function `E exp(i<u, L_t>) = exp(-t Ψ(u))`
//! with one of two spectral choices:
//!
//! ```text
//! Isotropic:  Ψ(u) = scale * |u|^α
//! PerAxis:    Ψ(u) = scale * Σ_i |u_i|^α
//! ```
//!
//! Per-axis increments are independent Chambers-Mallows-Stuck draws. Isotropic
//! increments are Gaussian vectors subordinated by a positive (α/2)-stable
//! variable drawn with Kanter's representation.
//!
//! Every increment is a pure function of `(seed, particle, step)`: the key
//! selects a ChaCha stream and a word offset, so draws do not depend on
//! evaluation order or on the number of threads.

use std::f64::consts::PI;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralMode {
    /// Uniform spectral measure on the sphere.
    Isotropic,
    /// Atoms at `±e_i`: independent coordinates.
    PerAxis,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StableParams {
    pub dim: usize,
    pub alpha: f64,
    pub mode: SpectralMode,
    pub scale: f64,
}

impl StableParams {
    pub fn new(dim: usize, alpha: f64, mode: SpectralMode, scale: f64) -> Result<Self> {
        let params = StableParams {
            dim,
            alpha,
            mode,
            scale,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn isotropic(dim: usize, alpha: f64) -> Result<Self> {
        Self::new(dim, alpha, SpectralMode::Isotropic, 1.0)
    }

    pub fn per_axis(dim: usize, alpha: f64) -> Result<Self> {
        Self::new(dim, alpha, SpectralMode::PerAxis, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::param("dim", "must be at least 1"));
        }
        if !(self.alpha > 1.0 && self.alpha < 2.0) {
            return Err(Error::param(
                "alpha",
                format!("must lie in (1, 2), got {}", self.alpha),
            ));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::param(
                "scale",
                format!("must be positive, got {}", self.scale),
            ));
        }
        Ok(())
    }

    /// Lower constant in `Ψ(u) >= C |u|^α`.
    pub fn nondegeneracy_constant(&self) -> f64 {
        match self.mode {
            SpectralMode::Isotropic => self.scale,
            // Σ|u_i|^α >= (Σ u_i^2)^{α/2} since α/2 < 1.
            SpectralMode::PerAxis => self.scale,
        }
    }
}

/// `Ψ(u)` for the configured spectral mode.
pub fn characteristic_exponent(params: &StableParams, u: &[f64]) -> f64 {
    debug_assert_eq!(u.len(), params.dim);
    let alpha = params.alpha;
    let raw = match params.mode {
        SpectralMode::Isotropic => {
            let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            norm.powf(alpha)
        }
        SpectralMode::PerAxis => u.iter().map(|x| x.abs().powf(alpha)).sum(),
    };
    params.scale * raw
}

/// Source of uniform variates on the open interval (0, 1).
///
/// Draws are split by role: reflecting every `odd` draw `u -> 1 - u` maps
/// each sample to its exact negative, while `even` draws only feed
/// magnitudes.
pub trait Draws {
    fn odd(&mut self) -> f64;
    fn even(&mut self) -> f64;
}

/// Counter-based stream for one `(seed, particle, step)` key.
#[derive(Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
}

const INV_2_POW_53: f64 = 1.0 / (1u64 << 53) as f64;

impl NoiseStream {
    pub fn new(seed: u64, particle: u64, step: u64) -> Self {
        NoiseSource::new(seed).stream(particle, step)
    }

    /// Uniform on (0, 1); zero (the only reachable endpoint) is re-drawn.
    fn open_unit(&mut self) -> f64 {
        loop {
            let u = (self.rng.next_u64() >> 11) as f64 * INV_2_POW_53;
            if u > 0.0 {
                return u;
            }
        }
    }
}

impl Draws for NoiseStream {
    fn odd(&mut self) -> f64 {
        self.open_unit()
    }

    fn even(&mut self) -> f64 {
        self.open_unit()
    }
}

/// Reflects the odd draws of the wrapped source.
pub struct Mirrored<D>(pub D);

impl<D: Draws> Draws for Mirrored<D> {
    fn odd(&mut self) -> f64 {
        1.0 - self.0.odd()
    }

    fn even(&mut self) -> f64 {
        self.0.even()
    }
}

/// Factory for the streams sharing one seed.
#[derive(Clone)]
pub struct NoiseSource {
    base: ChaCha8Rng,
}

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        NoiseSource {
            base: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn stream(&self, particle: u64, step: u64) -> NoiseStream {
        // Each step owns 2^32 words of its particle's stream.
        assert!(step < 1 << 36, "step index {step} out of range");
        let mut rng = self.base.clone();
        rng.set_stream(particle);
        rng.set_word_pos(u128::from(step) << 32);
        NoiseStream { rng }
    }
}

/// SplitMix64 finalizer, used to derive independent seeds.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed
        .wrapping_add(salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Standard symmetric stable variable with `E e^{iuX} = e^{-|u|^α}`
/// (Chambers-Mallows-Stuck, zero skewness).
pub fn standard_symmetric_stable<D: Draws>(alpha: f64, draws: &mut D) -> f64 {
    let v = PI * (draws.odd() - 0.5);
    let w = -draws.even().ln();
    let head = (alpha * v).sin() / v.cos().powf(1.0 / alpha);
    let tail = (((1.0 - alpha) * v).cos() / w).powf((1.0 - alpha) / alpha);
    head * tail
}

/// Positive stable variable with `E e^{-λS} = e^{-λ^a}`, `a ∈ (0, 1)`
/// (Kanter's representation).
pub fn positive_stable<D: Draws>(a: f64, draws: &mut D) -> f64 {
    let v = PI * draws.even();
    let w = -draws.even().ln();
    let head = (a * v).sin() / v.sin().powf(1.0 / a);
    let tail = (((1.0 - a) * v).sin() / w).powf((1.0 - a) / a);
    head * tail
}

/// Standard normal via the sine branch of Box-Muller; odd in its angle draw.
pub fn standard_normal<D: Draws>(draws: &mut D) -> f64 {
    let radius = (-2.0 * draws.even().ln()).sqrt();
    let angle = 2.0 * PI * (draws.odd() - 0.5);
    radius * angle.sin()
}

/// Writes one increment `L_dt` into `out` using the given draws.
pub fn sample_increment_with<D: Draws>(
    params: &StableParams,
    dt: f64,
    draws: &mut D,
    out: &mut [f64],
) {
    debug_assert_eq!(out.len(), params.dim);
    let alpha = params.alpha;
    let spread = (params.scale * dt).powf(1.0 / alpha);
    match params.mode {
        SpectralMode::PerAxis => {
            for x in out.iter_mut() {
                *x = spread * standard_symmetric_stable(alpha, draws);
            }
        }
        SpectralMode::Isotropic => {
            let s = positive_stable(alpha / 2.0, draws);
            let radius = (2.0 * s).sqrt() * spread;
            for x in out.iter_mut() {
                *x = radius * standard_normal(draws);
            }
        }
    }
}

pub fn sample_increment(params: &StableParams, dt: f64, stream: &mut NoiseStream) -> Vec<f64> {
    assert!(dt > 0.0, "increment length must be positive");
    let mut out = vec![0.0; params.dim];
    sample_increment_with(params, dt, stream, &mut out);
    out
}

/// `count` independent increments, one per particle id at step 0.
pub fn sample_many(params: &StableParams, dt: f64, seed: u64, count: usize) -> Vec<Vec<f64>> {
    use rayon::prelude::*;
    let source = NoiseSource::new(seed);
    (0..count)
        .into_par_iter()
        .map(|i| sample_increment(params, dt, &mut source.stream(i as u64, 0)))
        .collect()
}

/// `(1/M) Σ cos<u, x_m>`; the imaginary part vanishes for symmetric laws.
pub fn empirical_cf(samples: &[Vec<f64>], u: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    let mut terms = Vec::with_capacity(samples.len());
    for x in samples {
        if x.len() != u.len() {
            return Err(Error::DimensionMismatch {
                expected: u.len(),
                got: x.len(),
            });
        }
        let phase: f64 = x.iter().zip(u).map(|(a, b)| a * b).sum();
        terms.push(phase.cos());
    }
    Ok(crate::stats::pairwise_sum(&terms) / samples.len() as f64)
}

/// Fixed 8-point frequency grid used by the CF checks.
///
/// Radii sweep `0.25..=3`; directions alternate between the first axis, the
/// main diagonal and (for `dim >= 2`) the second axis.
pub fn cf_check_grid(dim: usize) -> Vec<Vec<f64>> {
    const RADII: [f64; 8] = [0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0, 3.0];
    RADII
        .iter()
        .enumerate()
        .map(|(k, &r)| {
            let mut u = vec![0.0; dim];
            match (k % 3, dim) {
                (_, 1) | (0, _) => u[0] = r,
                (1, _) => {
                    let c = r / (dim as f64).sqrt();
                    u.iter_mut().for_each(|x| *x = c);
                }
                _ => u[1] = r,
            }
            u
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponent_examples() {
        let iso = StableParams::isotropic(2, 1.5).unwrap();
        let u = [0.6, 0.8];
        assert!((characteristic_exponent(&iso, &u) - 1.0).abs() < 1e-15);

        let axis = StableParams::per_axis(2, 1.5).unwrap();
        assert_eq!(characteristic_exponent(&axis, &[1.0, 1.0]), 2.0);

        let iso12 = StableParams::isotropic(2, 1.2).unwrap();
        let v = characteristic_exponent(&iso12, &[2.0, 0.0]);
        assert!((v - 2f64.powf(1.2)).abs() < 1e-14);
        assert!((v - 2.2974).abs() < 1e-4);

        assert_eq!(characteristic_exponent(&iso, &[0.0, 0.0]), 0.0);
        assert_eq!(characteristic_exponent(&axis, &[0.0, 0.0]), 0.0);
    }

    #[test]
    fn params_reject_out_of_range() {
        assert!(StableParams::isotropic(1, 1.0).is_err());
        assert!(StableParams::isotropic(1, 2.0).is_err());
        assert!(StableParams::isotropic(0, 1.5).is_err());
        assert!(StableParams::new(1, 1.5, SpectralMode::PerAxis, 0.0).is_err());
    }

    #[test]
    fn empirical_cf_examples() {
        assert_eq!(empirical_cf(&[], &[1.0]), Err(Error::EmptySampleSet));
        assert_eq!(empirical_cf(&[vec![0.0, 0.0]], &[3.0, -1.0]).unwrap(), 1.0);
        let v = vec![PI, 0.0];
        let samples = vec![v.clone(), v.iter().map(|x| -x).collect()];
        let cf = empirical_cf(&samples, &[1.0, 5.0]).unwrap();
        assert!((cf + 1.0).abs() < 1e-15);
    }

    #[test]
    fn streams_are_pure_functions_of_key() {
        let params = StableParams::isotropic(3, 1.5).unwrap();
        let a = sample_increment(&params, 0.1, &mut NoiseStream::new(7, 3, 11));
        let b = sample_increment(&params, 0.1, &mut NoiseStream::new(7, 3, 11));
        let c = sample_increment(&params, 0.1, &mut NoiseStream::new(7, 3, 12));
        let d = sample_increment(&params, 0.1, &mut NoiseStream::new(7, 4, 11));
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn mirrored_draws_negate_samples() {
        for mode in [SpectralMode::Isotropic, SpectralMode::PerAxis] {
            let params = StableParams::new(2, 1.3, mode, 2.0).unwrap();
            for step in 0..200 {
                let mut plain = NoiseStream::new(5, 1, step);
                let mut flipped = Mirrored(NoiseStream::new(5, 1, step));
                let mut x = [0.0; 2];
                let mut y = [0.0; 2];
                sample_increment_with(&params, 0.5, &mut plain, &mut x);
                sample_increment_with(&params, 0.5, &mut flipped, &mut y);
                assert_eq!(x[0], -y[0]);
                assert_eq!(x[1], -y[1]);
            }
        }
    }

    #[test]
    fn grid_has_eight_points() {
        for dim in 1..4 {
            let grid = cf_check_grid(dim);
            assert_eq!(grid.len(), 8);
            assert!(grid.iter().all(|u| u.len() == dim));
        }
    }
}
