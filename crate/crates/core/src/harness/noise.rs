//! Seeded additive Gaussian noise.
//!
//! Samples come from SplitMix64 seeded with the given value as its state.
//! Each pair of outputs `(a, b)` becomes two normals through Box–Muller:
//! `u1 = ((a >> 11) + 1) * 2^-53` in `(0, 1]`, `u2 = (b >> 11) * 2^-53` in
//! `[0, 1)`, `z0 = sqrt(-2 ln u1) cos(2 pi u2)`, `z1 = sqrt(-2 ln u1) sin(2 pi u2)`.
//! Normals are used in generation order over pixels in row-major order.

use rand_core::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

use crate::error::{CpscError, Result};
use crate::patch::ImagePlane;

const TWO_POW_MINUS_53: f64 = 1.0 / (1u64 << 53) as f64;

/// Endless stream of standard normal samples.
pub struct GaussianStream {
    rng: SplitMix64,
    spare: Option<f64>,
}

impl GaussianStream {
    pub fn new(seed: u64) -> Self {
        GaussianStream {
            rng: SplitMix64::seed_from_u64(seed),
            spare: None,
        }
    }
}

impl Iterator for GaussianStream {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        if let Some(z) = self.spare.take() {
            return Some(z);
        }
        let u1 = ((self.rng.next_u64() >> 11) + 1) as f64 * TWO_POW_MINUS_53;
        let u2 = (self.rng.next_u64() >> 11) as f64 * TWO_POW_MINUS_53;
        let radius = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare = Some(radius * s);
        Some(radius * c)
    }
}

/// `img + sigma * z` without clamping.
pub fn add_gaussian_noise(img: &ImagePlane, sigma: f64, seed: u64) -> Result<ImagePlane> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(CpscError::arg(format!("noise level must be nonnegative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let data = img
        .pixels()
        .iter()
        .zip(GaussianStream::new(seed))
        .map(|(&v, z)| v + sigma * z)
        .collect();
    ImagePlane::new(img.width(), img.height(), data)
}
