//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream keyed by
//! `(seed, index)`, so a sample's value never depends on how many samples
//! came before it or on which thread produced it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent purposes get independent seeds.
pub mod tag {
    pub const SAMPLE: u64 = 0x01;
    pub const SYMMETRIC: u64 = 0x02;
    pub const MATCH: u64 = 0x03;
    pub const REGION: u64 = 0x04;
    pub const SHUFFLE: u64 = 0x05;
    pub const PERTURB: u64 = 0x06;
    pub const SOURCE: u64 = 0x07;
    pub const TARGET: u64 = 0x08;
    pub const BATTERY: u64 = 0x09;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a purpose tag into a seed.
pub fn derive(seed: u64, tag: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ tag.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// The generator for draw number `index` under `seed`.
pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
