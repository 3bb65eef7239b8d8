//! Deterministic random streams.
//!
//! Every stochastic routine draws from [`Rng`], a ChaCha8 generator keyed by
//! `ChaCha8Rng::seed_from_u64(seed)`. ChaCha8 is specified bit-for-bit, so the
//! same seed yields the same stream on every platform.
//!
//! Independent sub-streams are derived with [`Rng::derive`]: the ids are folded
//! into the parent seed with the SplitMix64 finalizer
//! (`s <- mix(s ^ mix(id + 0x9E3779B97F4A7C15))` for each id in order), and the
//! child generator is keyed by the result. Derivation depends only on the
//! parent seed, never on how much of the parent stream has been consumed, so
//! parallel workers get the same streams regardless of scheduling.
//!
//! Uniform reals use the top 53 bits of a `u64`. Bounded integers use rejection
//! on the top of the `u64` range. Gaussians use the Box-Muller transform, both
//! outputs consumed in order.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a path of stream ids into a child seed.
pub fn split_seed(seed: u64, ids: &[u64]) -> u64 {
    ids.iter().fold(seed, |acc, &id| {
        splitmix64(acc ^ splitmix64(id.wrapping_add(GOLDEN_GAMMA)))
    })
}

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
    spare_gaussian: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
            spare_gaussian: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Fresh generator for the sub-stream named by `ids`.
    pub fn derive(&self, ids: &[u64]) -> Rng {
        Rng::new(split_seed(self.seed, ids))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[lo, hi]`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..bound`. `bound` must be positive.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "below() needs a positive bound");
        // 2^64 mod bound values at the top of the range would bias the result
        let reject = (u64::MAX % bound).wrapping_add(1) % bound;
        loop {
            let x = self.next_u64();
            if reject == 0 || x <= u64::MAX - reject {
                return x % bound;
            }
        }
    }

    pub fn coin(&mut self) -> bool {
        self.next_u64() >> 63 == 1
    }

    /// Standard normal draw via Box-Muller.
    pub fn gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare_gaussian.take() {
            return z;
        }
        // 1 - U lies in (0, 1], keeping the logarithm finite
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        self.spare_gaussian = Some(radius * angle.sin());
        radius * angle.cos()
    }
}
