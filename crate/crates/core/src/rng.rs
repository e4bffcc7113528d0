//! Deterministic RNG streams.
//!
//! Every consumer gets its own ChaCha stream derived from a base seed and a
//! stream label, so concurrent consumers never share state and replays with
//! the same seed are bit-identical.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Well-known stream labels.
pub mod stream {
    pub const SAMPLE: u64 = 1;
    pub const SCAN: u64 = 2;
    pub const DRIFT: u64 = 3;
    pub const HBT_SOURCE: u64 = 4;
    pub const HBT_SPLIT: u64 = 5;
    pub const DETECTOR_A: u64 = 6;
    pub const DETECTOR_B: u64 = 7;
    pub const FOCUS: u64 = 8;
}

/// RNG for `(seed, stream)`; distinct streams are statistically independent.
pub fn stream_rng(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Sub-stream for the `index`-th repetition of an operation on `stream`.
/// Index 0 is the plain stream.
pub fn indexed_rng(seed: u64, stream: u64, index: u64) -> SimRng {
    let mixed = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    let mut rng = ChaCha8Rng::seed_from_u64(mixed);
    rng.set_stream(stream);
    rng
}
