//! Seed derivation and the crate-wide random generator.
//!
//! Every random stream is a `ChaCha8Rng` seeded from a 64-bit value. Child
//! streams (one per replication, per Monte Carlo chunk, ...) get their seed
//! by folding the parent seed and the child's integer key through the
//! SplitMix64 finalizer. The mapping is fixed, so a given base seed yields
//! the same streams on every platform and every run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the child stream identified by `keys` under `base`.
pub fn derive_seed(base: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(mix64(base), |acc, &k| mix64(acc ^ mix64(k)))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
