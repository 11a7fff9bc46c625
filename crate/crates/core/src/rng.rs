//! Deterministic RNG stream derivation.
//!
//! Every random draw in the crate flows from a single master seed through
//! named, counter-indexed streams: `stream(master, tag, index)`. Streams for
//! different (tag, index) pairs are statistically independent, so parallel
//! environments and batch jobs never contend or depend on scheduling order.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use sha2::{Digest, Sha256};

/// Derive a 32-byte seed from (master seed, purpose tag, index).
pub fn derive_seed(master: u64, tag: &str, index: u64) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update([0xfe]); // domain separator between fields
    hasher.update(tag.as_bytes());
    hasher.update([0xfe]);
    hasher.update(index.to_le_bytes());
    hasher.finalize().into()
}

/// A seeded ChaCha8 stream for the given purpose.
pub fn stream(master: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_seed(master, tag, index))
}
