//! Deterministic seed derivation. Every random stream in the crate is a
//! `ChaCha8Rng` keyed by a master seed, with the ChaCha stream id selecting
//! the purpose and a mixed index selecting the path.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids, one per independent consumer of randomness.
pub mod stream {
    pub const PATH: u64 = 1;
    pub const PERTURBATION: u64 = 2;
    pub const LIMIT: u64 = 3;
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for item `index` of stream `stream` under `master`.
pub fn derive(master: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(master ^ mix64(index)));
    rng.set_stream(stream);
    rng
}

/// Seed for item `index` of a study, usable as a master seed downstream.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    mix64(mix64(master).wrapping_add(index))
}
