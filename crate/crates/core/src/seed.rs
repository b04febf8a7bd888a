//! Deterministic seed derivation.
//!
//! Every random draw in a sample is driven by a generator seeded from the
//! sample seed and a fixed stream tag, so any single sample can be rebuilt
//! from its manifest record alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags for the independent random sources of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Bits = 1,
    LegitChannel = 2,
    AttackerChannel = 3,
    Noise = 4,
    AttackPlan = 5,
    Jammer = 6,
}

/// SplitMix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combines a base seed with an index into a new, well-mixed seed.
pub fn derive(base: u64, index: u64) -> u64 {
    mix(mix(base) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

pub fn stream_seed(sample_seed: u64, stream: Stream) -> u64 {
    derive(sample_seed, stream as u64)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream_rng(sample_seed: u64, stream: Stream) -> ChaCha8Rng {
    rng(stream_seed(sample_seed, stream))
}
