//! Deterministic pseudo-randomness.
//!
//! Every stream is ChaCha8 (RFC 7539 block function, 8 rounds) keyed through
//! `rand_core`'s `seed_from_u64` expansion (PCG32 output filling the 32-byte
//! key). Derived values use fixed, platform-independent recipes:
//!
//! * `next_f64`: the top 53 bits of `next_u64`, scaled by 2^-53, in `[0, 1)`.
//! * `below(n)`: Lemire's widening multiply with rejection, unbiased.
//! * `shuffle`: Fisher-Yates from the last index down, using `below`.
//!
//! A stream is fully described by [`RngState`] (key, stream id, word
//! position) and can be restored mid-sequence.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Serializable position of an [`HfeRng`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub key: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HfeRng {
    inner: ChaCha8Rng,
}

/// A fresh stream for `seed` (stream id 0).
pub fn seeded_rng(seed: u64) -> HfeRng {
    HfeRng::new(seed)
}

impl HfeRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream sharing the key of `seed` but on ChaCha stream `stream`.
    pub fn derive(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner }
    }

    pub fn state(&self) -> RngState {
        RngState {
            key: self.inner.get_seed(),
            stream: self.inner.get_stream(),
            word_pos: self.inner.get_word_pos(),
        }
    }

    pub fn from_state(state: &RngState) -> Self {
        let mut inner = ChaCha8Rng::from_seed(state.key);
        inner.set_stream(state.stream);
        inner.set_word_pos(state.word_pos);
        Self { inner }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    #[inline]
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)`. Panics when `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let threshold = n.wrapping_neg() % n;
        loop {
            let wide = (self.next_u64() as u128) * (n as u128);
            if (wide as u64) >= threshold {
                return (wide >> 64) as usize;
            }
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
