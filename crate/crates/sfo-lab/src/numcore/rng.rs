//! Counter-based splittable RNG.
//!
//! A stream is fully described by `(seed, stream_id, counter)`; the output at
//! any counter position is a pure function of those three words, so streams
//! can be split, serialized, and replayed without hidden state. Draw order
//! inside a stream is the only thing that advances the counter, which makes
//! parallel loops deterministic: give each work item its own child stream and
//! the result is independent of scheduling.
//!
//! The generator is the SplitMix64 finalizer applied to a keyed counter,
//! which is the construction `rand` uses for seeding and passes standard
//! statistical batteries at this output volume.

use serde::{Deserialize, Serialize};

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
const SPLIT_TWEAK: u64 = 0x6a09_e667_f3bc_c909;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    counter: u64,
}

impl RngStream {
    /// Root stream for a run seed.
    pub fn root(seed: u64) -> Self {
        RngStream {
            seed,
            stream_id: 0,
            counter: 0,
        }
    }

    /// Derives an independent child stream. The child is a pure function of
    /// `(self.seed, self.stream_id, tag)` and starts at counter 0; splitting
    /// does not advance the parent.
    pub fn split(&self, tag: u64) -> RngStream {
        RngStream {
            seed: self.seed,
            stream_id: mix64(self.stream_id ^ mix64(tag ^ SPLIT_TWEAK)),
            counter: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    #[inline]
    fn key(&self) -> u64 {
        mix64(mix64(self.seed ^ GOLDEN) ^ mix64(self.stream_id))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key().wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform draw in `[0, 1)` with 53 random bits.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `(0, 1]`; safe to pass through `ln`.
    #[inline]
    fn next_f64_open_zero(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller. Consumes exactly two uniforms per
    /// draw (no cached spare), so the stream stays a pure function of its
    /// counter.
    pub fn standard_normal(&mut self) -> f64 {
        let u1 = self.next_f64_open_zero();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.standard_normal()
    }

    pub fn fill_standard_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.standard_normal();
        }
    }

    pub fn normal_vec(&mut self, len: usize) -> Vec<f64> {
        (0..len).map(|_| self.standard_normal()).collect()
    }

    /// Uniform index in `[0, n)` by multiply-shift; `n` must be nonzero.
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }
}
