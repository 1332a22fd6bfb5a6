//! Deterministic random streams.
//!
//! Every stochastic step draws from its own ChaCha stream whose seed is derived
//! from a small key tuple, so results never depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream purposes, mixed into the derived key so unrelated draws never collide.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Augment = 2,
    Split = 3,
    Louvain = 4,
    Assign = 5,
    Sbm = 6,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a key tuple into one 64-bit seed.
pub fn derive_key(stream: Stream, parts: &[u64]) -> u64 {
    let mut h = splitmix64(stream as u64);
    for &p in parts {
        h = splitmix64(h ^ p);
    }
    h
}

pub fn stream(stream: Stream, parts: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_key(stream, parts))
}
