//! Deterministic seed derivation.
//!
//! Every random stream in the crate is derived from a user seed plus a tag and
//! an index, so that results never depend on call order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a stream tag and an index into a fresh seed.
pub fn derive(base: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ tag) ^ index)
}

pub fn rng(base: u64, tag: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(base, tag, index))
}

pub(crate) mod tags {
    pub const SAMPLE: u64 = 0x5A4D_504C;
    pub const PARTITION: u64 = 0x5041_5254;
    pub const INIT: u64 = 0x494E_4954;
    pub const SHUFFLE: u64 = 0x5348_5546;
    pub const TIES: u64 = 0x5449_4553;
    pub const MC_TRIAL: u64 = 0x4D43_5452;
    pub const EVAL: u64 = 0x4556_414C;
    pub const ORACLE: u64 = 0x4F52_434C;
}
