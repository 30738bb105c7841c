//! Seeded random streams.
//!
//! Every command takes a single `--seed`; all randomness flows from it
//! through named sub-streams so partial reruns are reproducible. A stream
//! is identified by a string such as `"noise"`, `"shuffle"` or
//! `"sample/3"`; the name is hashed into the ChaCha stream id, so streams
//! with different names are statistically independent.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a, used to map stream names to ChaCha stream ids.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Deterministic RNG for the sub-stream `name` of a run seed.
pub fn stream(seed: u64, name: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a64(name.as_bytes()));
    rng
}

/// Derives a child seed, for components that take a plain `u64`.
pub fn child_seed(seed: u64, name: &str) -> u64 {
    seed ^ fnv1a64(name.as_bytes()).rotate_left(17)
}
