//! Stable seed derivation so every episode, step and hypothesis gets its own
//! reproducible random stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Mixes a base seed with a sequence of integers.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    for p in parts {
        h.update(p.to_le_bytes());
    }
    first_u64(&h.finalize())
}

/// Seed keyed by a string (e.g. a scene id) plus integers.
pub fn keyed_seed(key: &str, parts: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update((key.len() as u64).to_le_bytes());
    h.update(key.as_bytes());
    for p in parts {
        h.update(p.to_le_bytes());
    }
    first_u64(&h.finalize())
}

fn first_u64(bytes: &[u8]) -> u64 {
    u64::from_le_bytes(bytes[..8].try_into().expect("digest has 32 bytes"))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
