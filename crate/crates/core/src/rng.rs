//! Seeding for every random draw in the pipeline.
//!
//! All randomness comes from ChaCha8 streams. A stream is keyed by a global
//! seed and a string (a word or a prompt id) through SHA-256, so each word's
//! draws are independent of the order in which words are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives a 64-bit seed from `global_seed` and `key`.
pub fn derive_seed(global_seed: u64, key: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(global_seed.to_le_bytes());
    hasher.update(key.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn keyed_rng(global_seed: u64, key: &str) -> ChaCha8Rng {
    rng_from_seed(derive_seed(global_seed, key))
}
