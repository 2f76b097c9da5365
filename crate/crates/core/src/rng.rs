//! Portable seeded randomness.
//!
//! All randomness in the crate comes from [`SplitMix64`], a 64-bit
//! counter-based generator: the `k`-th output is `mix(seed + k * GAMMA)` where
//! `GAMMA = 0x9E3779B97F4A7C15` and `mix` is the Stafford variant-13 finalizer.
//! The algorithm is a dozen lines in any language, so synthetic fixtures can be
//! regenerated bit-for-bit elsewhere.
//!
//! Derived draws:
//! - `uniform()` takes the top 53 bits of one output: `(x >> 11) * 2^-53`, in `[0, 1)`.
//! - `normal()` is the cosine branch of Box-Muller over two uniforms
//!   `u1 = 1 - uniform()`, `u2 = uniform()`; one normal per two outputs.
//! - `below(n)` is Lemire-free modulo reduction `x % n`; the bias is below
//!   `n / 2^64` and irrelevant at the sizes used here.
//! - `shuffle` is Fisher-Yates from the back: for `i` in `(1..len).rev()`,
//!   swap `i` with `below(i + 1)`.

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    /// Independent generator for a named sub-stream of `seed`.
    pub fn stream(seed: u64, stream: u64) -> Self {
        SplitMix64::new(mix(seed ^ mix(stream.wrapping_add(GAMMA))))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        mix(self.state)
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        (self.next_u64() % n as u64) as usize
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
