//! Seed derivation. Every random stream is a `ChaCha8Rng` keyed by the run
//! seed plus a path of tags, so streams never depend on creation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn stream(base: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tags))
}

/// Stream tags.
pub mod tag {
    pub const INIT: u64 = 1;
    pub const BATCHES: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const SHARED_LATENT: u64 = 4;
    pub const OWN_LATENT: u64 = 5;
    pub const SAMPLES: u64 = 6;
    pub const BASELINE: u64 = 7;
}
