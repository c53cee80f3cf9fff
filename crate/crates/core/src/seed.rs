//! Tagged sub-seed derivation.
//!
//! Every stochastic step draws from its own stream seeded by hashing the master
//! seed together with a tag, so adding or reordering steps never shifts the
//! random numbers another step sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive a child seed from `master` and a textual tag.
pub fn sub_seed(master: u64, tag: &str) -> u64 {
    sub_seed_indexed(master, tag, 0)
}

/// Derive a child seed from `master`, a tag and an integer index.
pub fn sub_seed_indexed(master: u64, tag: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update((tag.len() as u64).to_le_bytes());
    hasher.update(tag.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// The RNG used throughout the engine.
pub type EngineRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> EngineRng {
    ChaCha8Rng::seed_from_u64(seed)
}
