//! Deterministic random streams.
//!
//! All randomness in a run flows from one root seed. Independent streams are
//! derived by hashing the root together with a label path (task index, phase
//! tag, step counter) through a splitmix64 chain, then feeding the result to
//! ChaCha8. Identical (root, path) pairs always yield identical streams;
//! distinct paths are statistically independent.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Phase tags used when deriving per-phase streams.
pub mod phase {
    pub const INIT_CLASSIFIER: u64 = 1;
    pub const INIT_DENOISER: u64 = 2;
    pub const CLASSIFIER_BATCH: u64 = 3;
    pub const REHEARSAL: u64 = 4;
    pub const DIFFUSION_STEP: u64 = 5;
    pub const DIFFUSION_DATASET: u64 = 6;
    pub const DATA_GEN: u64 = 7;
    pub const SPLIT: u64 = 8;
    pub const SAMPLER: u64 = 9;
    pub const PROBE: u64 = 10;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a root seed and a label path.
pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    let mut state = splitmix64(root ^ 0xa076_1d64_78bd_642f);
    for &p in path {
        state = splitmix64(state ^ splitmix64(p));
    }
    state
}

/// ChaCha8 stream for a (root, path) pair.
pub fn stream(root: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, path))
}

/// ChaCha8 stream directly from a seed.
pub fn from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
