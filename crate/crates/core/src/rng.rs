//! Seeded random number streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic generator used throughout the crate.
pub type Rng = ChaCha8Rng;

/// Seeds a [`Rng`] from `seed`.
pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent seed for a named sub-task (splitmix64 finaliser).
///
/// Used so that data generation, splitting and initialisation driven by the
/// same experiment seed do not share a stream.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut z = seed;
    for b in tag.bytes() {
        z = z.wrapping_mul(0x100000001b3).wrapping_add(u64::from(b));
    }
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
