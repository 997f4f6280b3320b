//! Seed architecture.
//!
//! Every random source is a ChaCha8 stream keyed by a base seed and a
//! [`Stream`] tag, so changing one consumer never shifts another's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Independent random consumers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stream {
    Arrivals = 1,
    Erasures = 2,
    ParamInit = 3,
    Gumbel = 4,
    Replay = 5,
    Lottery = 6,
    TrainEpisodes = 7,
    EvalEpisodes = 8,
    TestEpisodes = 9,
    Repetition = 10,
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `base` for the given stream and index.
pub fn derive_seed(base: u64, stream: Stream, index: u64) -> u64 {
    mix(mix(base ^ mix(stream as u64)) ^ index)
}

pub fn stream_rng(base: u64, stream: Stream, index: u64) -> SimRng {
    SimRng::seed_from_u64(derive_seed(base, stream, index))
}

/// Root of the evaluation episode seeds, shared by every repetition and method.
pub const EVAL_ROOT: u64 = 0x0E5A_1DA7_E5EE_D000;
/// Root of the test episode seeds, disjoint from evaluation and training.
pub const TEST_ROOT: u64 = 0x7E57_5EED_0000_0001;

pub fn eval_episode_seed(index: u64) -> u64 {
    derive_seed(EVAL_ROOT, Stream::EvalEpisodes, index)
}

pub fn test_episode_seed(index: u64) -> u64 {
    derive_seed(TEST_ROOT, Stream::TestEpisodes, index)
}
