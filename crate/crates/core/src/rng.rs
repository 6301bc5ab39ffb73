//! Seeded random streams split by stable string labels.

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use sha2::{Digest, Sha256};

/// A root seed from which independent, reproducible generators are derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStream {
    seed: u64,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child stream for a labelled subtask. The derived seed depends only on
    /// the parent seed and the label.
    pub fn child(&self, label: &str) -> SeedStream {
        let digest = self.digest(label);
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        SeedStream { seed: u64::from_le_bytes(bytes) }
    }

    /// Generator for a labelled subtask.
    pub fn rng(&self, label: &str) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.digest(label))
    }

    fn digest(&self, label: &str) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(label.as_bytes());
        hasher.finalize().into()
    }
}
