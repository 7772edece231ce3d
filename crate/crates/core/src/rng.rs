//! Counter-based pseudo-random streams.
//!
//! Every random quantity in the crate is a pure function of
//! `(master seed, stream tag, counter)`. There is no mutable generator
//! state, so negative indices, random access and parallel evaluation all
//! cost the same as sequential draws and produce identical values.

/// SplitMix64 finalizer. Full-avalanche mixing of a 64-bit word.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// A stateless stream of 64-bit values indexed by a counter.
///
/// Distinct `(seed, tag)` pairs give statistically independent streams;
/// within a stream, `value(c)` is the SplitMix64 output at position `c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterStream {
    key: u64,
}

impl CounterStream {
    pub fn new(master_seed: u64, stream_tag: u64) -> Self {
        let key = mix64(master_seed ^ mix64(stream_tag.wrapping_mul(GOLDEN)));
        CounterStream { key }
    }

    /// The raw 64-bit word at position `counter`.
    pub fn value(&self, counter: u64) -> u64 {
        mix64(self.key.wrapping_add(counter.wrapping_mul(GOLDEN)))
    }

    /// Signed counters map two's-complement, so negative indices are valid.
    pub fn value_signed(&self, counter: i64) -> u64 {
        self.value(counter as u64)
    }

    /// Uniform double in `[0, 1)` with 53 random bits.
    pub fn unit_f64(&self, counter: u64) -> f64 {
        (self.value(counter) >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Uniform double in `[-1, 1)`.
    pub fn symmetric_f64(&self, counter: u64) -> f64 {
        2.0 * self.unit_f64(counter) - 1.0
    }

    /// Uniform index in `0..len`.
    pub fn index(&self, counter: u64, len: usize) -> usize {
        debug_assert!(len > 0);
        let idx = (self.unit_f64(counter) * len as f64) as usize;
        idx.min(len - 1)
    }
}
