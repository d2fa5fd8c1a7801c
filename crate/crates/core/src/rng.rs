//! Seeded, splittable random streams.
//!
//! Every random stream in the crate is derived from a root seed plus a path
//! of stream labels, so draws never depend on the order in which streams are
//! created. This keeps parallel generation and resumed training bit-exact.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes a root seed with a path of labels into a single 64-bit key.
pub fn derive_key(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p.wrapping_add(0x1234_5678))))
}

/// Independent generator for `(seed, path)`.
pub fn stream(seed: u64, path: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_key(seed, path))
}

/// Stream labels used across the crate.
pub mod label {
    pub const SYNTH: u64 = 1;
    pub const SAMPLER: u64 = 2;
    pub const INIT: u64 = 3;
    pub const STAGE1: u64 = 11;
    pub const STAGE2: u64 = 12;
    pub const STAGE3: u64 = 13;
    pub const ENSEMBLE: u64 = 20;
    pub const VALIDATION: u64 = 21;
    pub const RANKS: u64 = 30;
}
