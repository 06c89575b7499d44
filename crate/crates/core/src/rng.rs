//! Seeded random streams.
//!
//! Every random quantity in the crate is drawn from a stream identified by
//! `(root seed, tag, index)`. The stream is a ChaCha8 generator whose 256-bit
//! key is `SHA-256("ddpm-bound/stream/v1" || root_le || tag)` and whose 64-bit
//! stream id is `index`. Work that is split across threads therefore draws
//! identical numbers regardless of how many workers run it, as long as each
//! task uses its own `(tag, index)` pair.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Stream = ChaCha8Rng;

/// A root seed that expands into independent named streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedRoot(pub u64);

impl SeedRoot {
    pub fn stream(&self, tag: &str, index: u64) -> Stream {
        let mut hasher = Sha256::new();
        hasher.update(b"ddpm-bound/stream/v1");
        hasher.update(self.0.to_le_bytes());
        hasher.update(tag.as_bytes());
        let key: [u8; 32] = hasher.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(index);
        rng
    }

    /// A child root, for handing a whole sub-computation its own namespace.
    pub fn child(&self, tag: &str, index: u64) -> SeedRoot {
        let mut hasher = Sha256::new();
        hasher.update(b"ddpm-bound/child/v1");
        hasher.update(self.0.to_le_bytes());
        hasher.update(tag.as_bytes());
        hasher.update(index.to_le_bytes());
        let digest: [u8; 32] = hasher.finalize().into();
        let mut word = [0u8; 8];
        word.copy_from_slice(&digest[..8]);
        SeedRoot(u64::from_le_bytes(word))
    }
}

/// Shorthand for a single stream straight from a `u64` seed.
pub fn stream(seed: u64) -> Stream {
    SeedRoot(seed).stream("default", 0)
}
