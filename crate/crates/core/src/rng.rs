//! Named random sub-streams.
//!
//! Every consumer of randomness asks for a stream by name. The stream seed is
//! `root ^ h(name)` where `h` is the first eight bytes of SHA-256, so adding a
//! new consumer never shifts the values seen by an existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStream {
    root: u64,
}

pub fn name_hash(name: &str) -> u64 {
    let digest = Sha256::digest(name.as_bytes());
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head)
}

// Finalizer so that nested derivations do not commute.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SeedStream {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    pub fn seed_for(&self, name: &str) -> u64 {
        self.root ^ name_hash(name)
    }

    pub fn rng(&self, name: &str) -> StreamRng {
        ChaCha8Rng::seed_from_u64(self.seed_for(name))
    }

    /// A child stream whose own names live under `name`.
    pub fn child(&self, name: &str) -> SeedStream {
        SeedStream::new(splitmix64(self.seed_for(name)))
    }
}
