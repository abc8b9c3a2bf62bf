//! Seeded, platform-independent random numbers.
//!
//! The generator is SplitMix64: the state is a 64-bit counter advanced by
//! the golden-ratio increment `0x9E3779B97F4A7C15`, and each output is the
//! counter passed through the finalizer
//!
//! ```text
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! z =  z ^ (z >> 31)
//! ```
//!
//! Uniform doubles use the top 53 bits (`(x >> 11) * 2^-53`, in `[0, 1)`).
//! Normal draws use the Box-Muller cosine branch on two consecutive uniforms
//! `u1, u2`: `sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`. One normal consumes
//! exactly two uniforms.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::math;

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    state: u64,
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        mix(self.state)
    }

    /// Derives an independent stream; the parent advances by one step.
    pub fn split(&mut self) -> Rng {
        Rng {
            state: mix(self.next_u64() ^ 0xD6E8_FEB8_6659_FD93),
        }
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let v = lo + (hi - lo) * self.next_f64();
        // rounding can land exactly on `hi` for tiny ranges
        if v >= hi {
            lo
        } else {
            v
        }
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        let u1 = self.next_f64();
        let u2 = self.next_f64();
        let r = math::sqrt(-2.0 * math::ln(1.0 - u1));
        mean + std * r * math::cos(2.0 * PI * u2)
    }

    /// Uniform integer in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Lemire's multiply-shift; bias is < n / 2^64.
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn uniform_vec(&mut self, lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.uniform(lo, hi)).collect()
    }

    pub fn normal_vec(&mut self, mean: f64, std: f64, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal(mean, std)).collect()
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// `n` draws from `U[lo, hi)`.
pub fn seeded_uniform(rng: &mut Rng, lo: f64, hi: f64, n: usize) -> Vec<f64> {
    rng.uniform_vec(lo, hi, n)
}

/// `n` draws from `N(mean, std^2)`.
pub fn seeded_normal(rng: &mut Rng, mean: f64, std: f64, n: usize) -> Vec<f64> {
    rng.normal_vec(mean, std, n)
}
