//! Seed derivation for reproducible runs.
//!
//! All randomness flows from one master seed. Each consumer (parameter init,
//! per-step patch sampling, per-step quantization noise, ...) derives its own
//! stream from `(seed, domain, step)`, so resuming a run at step `t` replays
//! the exact draws of an uninterrupted run.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

/// Derives a child seed for `(seed, domain, step)`.
pub fn derive_seed(seed: u64, domain: &str, step: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update([0x2e]);
    hasher.update(domain.as_bytes());
    hasher.update([0x2e]);
    hasher.update(step.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[0..8].try_into().unwrap())
}

/// Derives an independent RNG for `(seed, domain, step)`.
pub fn stream(seed: u64, domain: &str, step: u64) -> ChaCha12Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update([0x1f]);
    hasher.update(domain.as_bytes());
    hasher.update([0x1f]);
    hasher.update(step.to_le_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha12Rng::from_seed(key)
}
