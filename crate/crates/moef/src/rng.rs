//! Seeded random source for the simulator.
//!
//! Paths must be reproducible across runs and portable across language
//! ports, so the generator is pinned and named: ChaCha12 keyed from a u64
//! seed, uniforms drawn as 53-bit doubles in [0,1), and standard normals
//! produced by the Box-Muller transform (two uniforms per pair, cached odd
//! draw). `GENERATOR_ID` identifies this exact scheme in logs and docs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Identifier of the pinned random scheme, for diagnostics.
pub const GENERATOR_ID: &str = "chacha12-boxmuller-v1";

/// Offset mixed into the path seed to derive the independent noise stream.
const NOISE_STREAM_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

pub(crate) struct SimRng {
    rng: ChaCha12Rng,
    cached_normal: Option<f64>,
}

impl SimRng {
    pub fn from_seed(seed: u64) -> Self {
        SimRng {
            rng: ChaCha12Rng::seed_from_u64(seed),
            cached_normal: None,
        }
    }

    /// Derives the noise stream for a path seed, disjoint from the chain
    /// stream that uses the seed directly.
    pub fn noise_stream(seed: u64) -> Self {
        Self::from_seed(seed.wrapping_add(NOISE_STREAM_SALT))
    }

    /// Uniform in [0,1) with 53-bit resolution.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Standard normal via Box-Muller.
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.cached_normal.take() {
            return z;
        }
        // u1 in (0,1] so the log is finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.cached_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Samples an index from a probability row (assumed to sum to ~1).
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        let u = self.uniform();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.len() - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = SimRng::from_seed(42);
        let mut b = SimRng::from_seed(42);
        for _ in 0..100 {
            assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
        }
    }

    #[test]
    fn normals_have_sane_moments() {
        let mut rng = SimRng::from_seed(7);
        let n = 200_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let z = rng.standard_normal();
            sum += z;
            sum_sq += z * z;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn categorical_respects_masses() {
        let mut rng = SimRng::from_seed(1);
        let mut counts = [0usize; 3];
        for _ in 0..30_000 {
            counts[rng.categorical(&[0.2, 0.5, 0.3])] += 1;
        }
        assert!((counts[0] as f64 / 30_000.0 - 0.2).abs() < 0.02);
        assert!((counts[1] as f64 / 30_000.0 - 0.5).abs() < 0.02);
    }
}
