//! Deterministic derivation of per-stream RNG seeds from one master seed.
//!
//! Every randomized component (split sampling, masking, weight init, data
//! order, bootstrap resampling, ...) draws from its own named stream so that
//! changing one consumer never perturbs another.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive a child seed from a master seed and a stream name.
pub fn derive_seed(master: u64, stream: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(stream.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Seeded RNG for a named stream. ChaCha keeps the stream stable across
/// platforms and library versions.
pub fn stream_rng(master: u64, stream: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream))
}
