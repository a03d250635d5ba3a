//! Seeded, hierarchical random streams.
//!
//! Every stochastic decision in the crate (weight init, spike selection,
//! dropout draws, dataset generation, epoch shuffles) draws from a stream
//! derived from the global seed plus a path of integers identifying the
//! context, e.g. `(seed, STREAM_TRAIN, epoch, sample)`. Streams for different
//! paths are independent, so samples of a batch can run in parallel and still
//! reproduce bit-exactly regardless of thread count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream domain tags. Kept distinct so that e.g. evaluation never consumes
/// draws from the training streams.
pub const STREAM_INIT: u64 = 1;
pub const STREAM_TRAIN: u64 = 2;
pub const STREAM_EVAL: u64 = 3;
pub const STREAM_DATA: u64 = 4;
pub const STREAM_SHUFFLE: u64 = 5;
pub const STREAM_GRADCHECK: u64 = 6;
pub const STREAM_SWEEP: u64 = 7;

/// SplitMix64 step; used to fold path components into a single 64-bit state.
fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derives a deterministic RNG from a seed and a context path.
pub fn derive_rng(seed: u64, path: &[u64]) -> ChaCha8Rng {
    let mut state = splitmix64(seed ^ 0x5851f42d4c957f2d);
    for &part in path {
        state = splitmix64(state ^ part.wrapping_mul(0xd1342543de82ef95));
    }
    ChaCha8Rng::seed_from_u64(state)
}
