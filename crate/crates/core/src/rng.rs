//! Deterministic, splittable random streams.
//!
//! A [`SeedTree`] node is a 64-bit key. Children are derived by mixing the
//! parent key with a label, so any stream can be addressed directly as a path
//! such as `root / "task" / 17 / "dataset" / 3` without consuming randomness
//! from a shared generator. Sampling order therefore never depends on thread
//! scheduling. The generator behind a leaf is ChaCha8, itself counter based.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A node in a deterministic seed hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedTree {
    key: u64,
}

impl SeedTree {
    pub fn new(seed: u64) -> Self {
        Self {
            key: mix64(seed ^ 0x6A09_E667_F3BC_C908),
        }
    }

    /// Child stream identified by a string label.
    pub fn child(&self, label: &str) -> Self {
        self.index(fnv1a64(label.as_bytes()))
    }

    /// Child stream identified by an integer label.
    pub fn index(&self, label: u64) -> Self {
        Self {
            key: mix64(self.key ^ mix64(label.wrapping_add(0x9E37_79B9_7F4A_7C15))),
        }
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    /// Generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.key)
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
