//! Order-independent seed derivation.
//!
//! Every random draw in a run comes from a ChaCha stream whose seed is a pure
//! function of the master seed and a path of labels (timestamp, stage,
//! level, ...). Work can therefore be reordered or parallelised without
//! changing results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stage labels used in seed paths.
pub mod stage {
    pub const DATASET: u64 = 1;
    pub const DISSIMILARITY: u64 = 2;
    pub const PUBLICATION: u64 = 3;
    pub const WARMUP: u64 = 4;
    pub const BASELINE: u64 = 5;
    pub const SUBSAMPLE: u64 = 6;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a label path into a master seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |acc, &label| {
        splitmix64(acc ^ splitmix64(label))
    })
}

pub fn derive_rng(master: u64, path: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(master, path))
}
