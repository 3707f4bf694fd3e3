//! Seeded, order-independent random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Derives an independent stream from a base seed and a tag path, e.g.
/// `(seed, [STEP, step, utterance])`. Streams never depend on thread
/// scheduling.
pub fn stream(seed: u64, tags: &[u64]) -> Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for t in tags {
        h.update(t.to_le_bytes());
    }
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

/// Stable 64-bit tag for a string (sample ids).
pub fn tag(s: &str) -> u64 {
    let digest = Sha256::digest(s.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub mod purpose {
    pub const AUGMENT: u64 = 1;
    pub const MASK: u64 = 2;
    pub const GUMBEL: u64 = 3;
    pub const CLUSTER: u64 = 4;
    pub const NEGATIVES: u64 = 5;
    pub const INIT: u64 = 6;
    pub const SHUFFLE: u64 = 7;
    pub const SYNTH: u64 = 8;
    pub const BANKS: u64 = 9;
}
