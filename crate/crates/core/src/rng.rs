//! Seeded random-number streams.
//!
//! All randomness in an experiment flows from a single root seed, split into
//! named streams so that each stage (pair generation, weight init, dropout
//! masks, subset sampling) can be reproduced independently. Pair generation
//! additionally gets one stream per pair index, which makes the generators
//! pure functions of `(seed, index)` and safe to shard across workers.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stage identifiers for stream derivation. The stream id of `(kind, index)`
/// is `(kind << 32) | index`, so stages never collide as long as indices stay
/// below 2^32.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    Init = 1,
    Dropout = 2,
    Pairs = 3,
    Subset = 4,
    Shuffle = 5,
}

/// A deterministic RNG stream. Thin wrapper so call sites name the stream
/// they draw from instead of passing bare ChaCha state around.
#[derive(Debug, Clone)]
pub struct Stream {
    rng: ChaCha8Rng,
}

impl Stream {
    pub fn named(root_seed: u64, kind: StreamKind) -> Self {
        Self::indexed(root_seed, kind, 0)
    }

    pub fn indexed(root_seed: u64, kind: StreamKind, index: u64) -> Self {
        assert!(index < (1 << 32), "stream index out of range");
        let mut rng = ChaCha8Rng::seed_from_u64(root_seed);
        rng.set_stream(((kind as u64) << 32) | index);
        Self { rng }
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        // 53 random mantissa bits.
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform over the inclusive integer range [lo, hi].
    pub fn next_i32_in(&mut self, lo: i32, hi: i32) -> i32 {
        debug_assert!(lo <= hi);
        let span = (hi - lo + 1) as u64;
        // Modulo bias is < 2^-50 for the tiny spans used here.
        lo + (self.rng.next_u64() % span) as i32
    }

    /// Uniform in [lo, hi).
    pub fn next_f64_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal via Box-Muller. Consumes two uniforms per draw so the
    /// stream position does not depend on caller batching.
    pub fn next_gaussian(&mut self) -> f64 {
        let u1 = self.next_f64().max(f64::MIN_POSITIVE);
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = (self.rng.next_u64() % (i as u64 + 1)) as usize;
            items.swap(i, j);
        }
    }

    /// Snapshot of the underlying ChaCha state, sufficient to reconstruct the
    /// stream exactly (used by checkpoints).
    pub fn state(&self) -> StreamState {
        StreamState {
            seed: self.rng.get_seed(),
            stream: self.rng.get_stream(),
            word_pos: self.rng.get_word_pos(),
        }
    }

    pub fn from_state(state: &StreamState) -> Self {
        let mut rng = ChaCha8Rng::from_seed(state.seed);
        rng.set_stream(state.stream);
        rng.set_word_pos(state.word_pos);
        Self { rng }
    }
}

/// Serializable ChaCha stream state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}
