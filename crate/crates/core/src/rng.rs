//! Seed hierarchy.
//!
//! A single master seed fans out into independent streams. Every stream is
//! addressed by a path of integers (a domain tag followed by identifiers such
//! as client id, round and step). The path is folded into a 64-bit seed with
//! the SplitMix64 finalizer, and the seed keys a ChaCha8 generator.
//!
//! Because each client's stream depends only on its own path, adding or
//! removing clients never changes the draws seen by any other client.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Domain tags used as the first path element.
pub mod tag {
    pub const DATASET: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const PARTITION: u64 = 3;
    pub const INIT: u64 = 4;
    pub const SELECT: u64 = 5;
    pub const CLIENT: u64 = 6;
    pub const GAN_INIT: u64 = 7;
    pub const GAN_SELECT: u64 = 8;
    pub const GAN_CLIENT: u64 = 9;
    pub const AUGMENT: u64 = 10;
    pub const CENTRAL: u64 = 11;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `parent` and a path of identifiers.
pub fn derive_seed(parent: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(parent), |acc, &p| {
        splitmix64(acc ^ splitmix64(p))
    })
}

/// A generator seeded directly from `seed`.
pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// A generator for the stream at `path` below `master`.
pub fn stream(master: u64, path: &[u64]) -> SimRng {
    rng_from_seed(derive_seed(master, path))
}
