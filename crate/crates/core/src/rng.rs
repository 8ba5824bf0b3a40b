//! Splittable seeded random streams.
//!
//! Every consumer of randomness gets its own ChaCha stream keyed by the
//! master seed plus a label path, so the sequence one consumer sees never
//! depends on how other consumers are interleaved.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Stream = ChaCha8Rng;

/// A node in the seed derivation tree.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeedTree {
    key: [u8; 32],
}

impl SeedTree {
    pub fn new(master_seed: u64) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(b"crest/seed");
        hasher.update(master_seed.to_le_bytes());
        SeedTree {
            key: hasher.finalize().into(),
        }
    }

    /// Child node for a named sub-key.
    pub fn child(&self, label: &str) -> SeedTree {
        let mut hasher = Sha256::new();
        hasher.update(self.key);
        hasher.update((label.len() as u64).to_le_bytes());
        hasher.update(label.as_bytes());
        SeedTree {
            key: hasher.finalize().into(),
        }
    }

    /// Child node for an indexed sub-key (generation, example index, ...).
    pub fn index(&self, idx: u64) -> SeedTree {
        let mut hasher = Sha256::new();
        hasher.update(self.key);
        hasher.update(b"#");
        hasher.update(idx.to_le_bytes());
        SeedTree {
            key: hasher.finalize().into(),
        }
    }

    pub fn stream(&self) -> Stream {
        ChaCha8Rng::from_seed(self.key)
    }

    /// A 64-bit seed derived from this node, for APIs that take plain seeds.
    pub fn seed_u64(&self) -> u64 {
        u64::from_le_bytes(self.key[..8].try_into().unwrap())
    }
}

/// Derives a plain seed from a master seed and a label.
pub fn derive_seed(master_seed: u64, label: &str) -> u64 {
    SeedTree::new(master_seed).child(label).seed_u64()
}
