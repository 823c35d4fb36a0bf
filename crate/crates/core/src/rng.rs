//! Seeded random streams.
//!
//! Every consumer of randomness gets its own ChaCha stream derived from one
//! user seed, so adding draws in one place never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream identifiers. Values are part of the reproducibility contract.
pub mod stream {
    pub const MODEL_INIT: u64 = 1;
    pub const SOURCE_SHUFFLE: u64 = 2;
    pub const TARGET_SHUFFLE: u64 = 3;
    pub const DATA_SOURCE: u64 = 10;
    pub const DATA_TARGET: u64 = 11;
    /// Permutation replicates use `PERMUTATION_BASE + replicate`.
    pub const PERMUTATION_BASE: u64 = 1 << 32;
}

pub fn substream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
