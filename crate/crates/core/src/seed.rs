//! Seed splitting.
//!
//! Replicate `i` of a run with master seed `s` always draws from
//! `ChaCha8Rng::seed_from_u64(split(s, i))`, so results do not depend on how
//! work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed number `index` of `master` (SplitMix64 step).
pub fn split(master: u64, index: u64) -> u64 {
    mix(master.wrapping_add(GAMMA.wrapping_mul(index.wrapping_add(1))))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for block `block` of a long Monte Carlo stream.
pub fn stream(seed: u64, block: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(block);
    r
}
