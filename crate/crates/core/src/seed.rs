//! Counter-based seed derivation.
//!
//! Every random stream in an experiment is keyed by a path of integers
//! (master seed, repeat, fold, cycle, purpose tag). Streams never share
//! state, so results do not depend on execution order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags mixed into derived seeds.
pub mod tag {
    pub const COARSE: u64 = 0xC0A5;
    pub const TRAIN: u64 = 0x7A11;
    pub const CANDIDATES: u64 = 0xCA4D;
    pub const RANDOM_UTILITY: u64 = 0x5A4D;
    pub const ORACLE: u64 = 0x0AC1;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `master` and a path of integers.
pub fn derive(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |acc, &p| {
        splitmix64(acc ^ splitmix64(p.wrapping_add(0x632B_E59B_D9B4_E019)))
    })
}

pub fn rng_for(master: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, path))
}
