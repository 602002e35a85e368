//! Seeded random streams with a fully documented algorithm.
//!
//! Generator: xoshiro256++ whose 256-bit state is filled from the `u64` seed
//! by SplitMix64 (constants 0x9E3779B97F4A7C15, 0xBF58476D1CE4E5B9,
//! 0x94D049BB133111EB). Uniforms take the top 53 bits of each output:
//! `(x >> 11) * 2^-53`. Normals use the Box–Muller transform on two
//! consecutive uniforms `u1, u2`: `sqrt(-2 ln(1 - u1)) * cos(2π u2)` first,
//! then the matching `sin` value. Any language can replay these streams.

use rand::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: Xoshiro256PlusPlus,
    spare_normal: Option<f64>,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    /// An independent stream derived from `(seed, stream)`.
    pub fn stream(seed: u64, stream: u64) -> Self {
        let mut mixer = Xoshiro256PlusPlus::seed_from_u64(stream ^ 0xA076_1D64_78BD_642F);
        Self::new(seed ^ mixer.next_u64())
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let radius = (-2.0 * (1.0 - u1).ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(radius * angle.sin());
        radius * angle.cos()
    }

    /// Index drawn with probability proportional to `weights` via the
    /// cumulative table `cumulative` (last entry is the total).
    pub fn pick(&mut self, cumulative: &[f64]) -> usize {
        let total = *cumulative.last().expect("non-empty cumulative table");
        let target = self.uniform() * total;
        let idx = cumulative.partition_point(|&c| c <= target);
        idx.min(cumulative.len() - 1)
    }
}
