//! Deterministic RNG derivation. All randomness in a run flows from one
//! global seed through named sub-streams, so each pipeline stage is
//! independently reproducible.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives an independent RNG for the named stream of the given run seed.
/// The same `(seed, label)` pair always yields the same stream.
pub fn derive_rng(seed: u64, label: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Derives a plain sub-seed for components that seed their own RNG.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    use rand_chacha::rand_core::RngCore;
    derive_rng(seed, label).next_u64()
}
