//! Derivation of independent RNG streams from a single user seed.
//!
//! Every random decision in the pipeline (bootstrap draws, feature
//! sampling, train/test splits, synthetic pixels) draws from a ChaCha
//! stream whose seed is a pure function of the root seed and a path of
//! tags. Workers can therefore be scheduled in any order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Finalizer from SplitMix64.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for an integer index such as a tree or run number.
pub fn derive(seed: u64, index: u64) -> u64 {
    mix(mix(seed) ^ index.rotate_left(32) ^ 0x5851_f42d_4c95_7f2d)
}

/// Child seed for a named purpose.
pub fn derive_tag(seed: u64, tag: &str) -> u64 {
    // FNV-1a over the tag, then mixed with the parent.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    mix(mix(seed) ^ h)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
