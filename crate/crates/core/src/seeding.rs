//! Derivation of independent generator streams from one run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed for stream `(tag, index)` under `seed`.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag.wrapping_mul(0x1000_0000_01b3) ^ splitmix64(index)))
}

/// Generator for stream `(tag, index)` under `seed`.
pub fn stream(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag, index))
}

pub(crate) mod tags {
    pub const SHUFFLE: u64 = 1;
    pub const TRAIN_EPS: u64 = 2;
    pub const RECON: u64 = 3;
    pub const RECON_TEST: u64 = 4;
    pub const PRIOR: u64 = 5;
    pub const SEARCH: u64 = 6;
    pub const SEARCH_DECODE: u64 = 7;
    pub const PCA: u64 = 8;
}
