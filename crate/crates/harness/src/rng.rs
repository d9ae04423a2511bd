//! Named random streams. Each stream is a ChaCha20 generator whose 256-bit
//! key is the SHA-256 digest of `(master_seed, grid key, seed, label)`, so
//! streams are independent of evaluation order and of other grid points.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StreamKey<'a> {
    pub master_seed: u64,
    /// Canonical text of the grid point, e.g. `n=1024;d=16;eps=1`.
    pub grid: &'a str,
    pub seed: u64,
    pub label: &'a str,
}

impl StreamKey<'_> {
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"dpstat-stream-v1");
        h.update(self.master_seed.to_le_bytes());
        for part in [self.grid.as_bytes(), self.label.as_bytes()] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part);
        }
        h.update(self.seed.to_le_bytes());
        h.finalize().into()
    }

    pub fn rng(&self) -> ChaCha20Rng {
        ChaCha20Rng::from_seed(self.digest())
    }
}

pub fn stream(master_seed: u64, grid: &str, seed: u64, label: &str) -> ChaCha20Rng {
    StreamKey { master_seed, grid, seed, label }.rng()
}
