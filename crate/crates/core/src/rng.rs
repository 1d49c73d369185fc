//! Keyed random streams.
//!
//! Every random draw in the crate comes from a ChaCha stream whose key is
//! `SHA-256(seed, replication, tag)`, so replications can run on any thread in
//! any order and still see the same numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha20Rng;

/// Identifies one independent random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub replication: u64,
}

impl StreamKey {
    pub fn new(seed: u64, replication: u64) -> Self {
        Self { seed, replication }
    }

    /// Stream for one purpose within this replication.
    pub fn stream(&self, tag: &str) -> StreamRng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(self.replication.to_le_bytes());
        h.update((tag.len() as u64).to_le_bytes());
        h.update(tag.as_bytes());
        let digest = h.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        ChaCha20Rng::from_seed(key)
    }

    /// Derived 64-bit seed, for APIs that take a plain seed.
    pub fn sub_seed(&self, tag: &str) -> u64 {
        use rand::RngCore;
        self.stream(tag).next_u64()
    }
}
