//! Seeded random source used by the workload generator.
//!
//! The stream is ChaCha8 seeded through `seed_from_u64`, and every draw is
//! derived from raw `u64` outputs with the formulas below, so a trace is a
//! pure function of its seed on every platform and crate version that keeps
//! the ChaCha8 stream stable.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

#[derive(Debug, Clone)]
pub struct SimRng(ChaCha8Rng);

impl SimRng {
    pub fn seed_from_u64(seed: u64) -> Self {
        SimRng(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform in (0, 1]: `((x >> 11) + 1) / 2^53`.
    pub fn unit_open_closed(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 / (1u64 << 53) as f64
    }

    /// Uniform in [0, 1): `(x >> 11) / 2^53`.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform integer in `[0, n)` by rejection sampling, so no modulo bias.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.next_u64();
            if x < zone {
                return x % n;
            }
        }
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn between(&mut self, lo: u64, hi: u64) -> u64 {
        assert!(lo <= hi);
        lo + self.below(hi - lo + 1)
    }

    pub fn bit(&mut self) -> bool {
        self.next_u64() >> 63 == 1
    }

    /// Exponential draw by inverse CDF: `-mean * ln(u)` with `u` in (0, 1].
    pub fn exponential(&mut self, mean: f64) -> f64 {
        -mean * self.unit_open_closed().ln()
    }
}
