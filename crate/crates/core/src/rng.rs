//! Seeded randomness with a fixed, platform-independent algorithm.
//!
//! The generator is PCG-XSL-RR 128/64 (`Pcg64`), seeded with state
//! `seed XOR 0xcafef00dd15ea5e5` and the reference stream constant. Derived
//! quantities use only `next_u64`:
//!
//! * unit floats: the top 53 bits scaled by 2^-53, giving `[0, 1)`;
//! * bounded integers: `next_u64() % n` (bias is negligible for our `n`);
//! * shuffles: Fisher-Yates from the last index down to 1.
//!
//! Any reimplementation following these rules reproduces the same streams.

use rand_core::Rng as _;
use rand_pcg::Pcg64;

const STREAM: u128 = 0x0a02_bdbf_7bb3_c0a7_ac28_fa16_a64a_bf96;

pub struct SeededRng(Pcg64);

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self(Pcg64::new(seed as u128 ^ 0xcafe_f00d_d15e_a5e5, STREAM))
    }

    /// Independent generator for a named purpose under the same seed.
    pub fn derived(seed: u64, purpose: u64) -> Self {
        Self::new(seed ^ purpose.wrapping_mul(0x9e37_79b9_7f4a_7c15))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
