//! Seeded randomness.
//!
//! Everything random in the crate flows through a `ChaCha8Rng` so runs are
//! bit-reproducible across platforms. Independent sub-streams (per sample,
//! per epoch, per pipeline step) are derived by folding tag words into the
//! root seed with splitmix64 instead of sharing one sequential stream, so
//! parallel execution cannot reorder draws.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// splitmix64 finalizer; good avalanche, cheap, stable.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Mix `tags` into `seed`, producing a stable sub-stream seed.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    let mut acc = splitmix64(seed);
    for &t in tags {
        acc = splitmix64(acc ^ t.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    }
    acc
}

/// Rng for an independent sub-stream identified by `tags`.
pub fn derive(seed: u64, tags: &[u64]) -> Rng {
    from_seed(derive_seed(seed, tags))
}
