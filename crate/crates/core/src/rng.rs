//! Counter-based SplitMix64 random streams.
//!
//! The generator is fully defined by two formulas so any implementation in
//! any language reproduces the same numbers:
//!
//! ```text
//! state += 0x9E37_79B9_7F4A_7C15
//! z = state
//! z = (z ^ (z >> 30)) * 0xBF58_476D_1CE4_E5B9
//! z = (z ^ (z >> 27)) * 0x94D0_49BB_1331_11EB
//! out = z ^ (z >> 31)
//! ```
//!
//! (all arithmetic wrapping mod 2^64). A keyed stream for entity `index` of
//! kind `stream` under `seed` starts at
//! `state = mix(seed ^ mix(stream) ^ mix(index + 1))`, where `mix` is the
//! output finalizer above applied to its argument. Keying per entity keeps
//! every draw independent of iteration and parallelization order.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream tags separating the independent draws of one seed.
pub mod stream {
    pub const ROCK: u64 = 1;
    pub const PARTICLE: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const SPLIT: u64 = 4;
}

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(state: u64) -> Self {
        Self { state }
    }

    /// Stream for entity `index` of kind `stream` under `seed`.
    pub fn keyed(seed: u64, stream: u64, index: u64) -> Self {
        Self::new(mix64(seed ^ mix64(stream) ^ mix64(index.wrapping_add(1))))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    /// Uniform in [0, 1) with 53 bits of resolution.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    #[inline]
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n). `n` must be nonzero.
    pub fn below(&mut self, n: u64) -> u64 {
        // Lemire's multiply-shift; the tiny bias is irrelevant here.
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    /// Exponential variate with the given rate (mean 1/rate).
    pub fn exponential(&mut self, rate: f64) -> f64 {
        // 1 - u lies in (0, 1], so the log is finite.
        -(1.0 - self.next_f64()).ln() / rate
    }
}
