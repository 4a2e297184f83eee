//! Deterministic seed derivation shared by the generator, the detector model
//! and the mock clients.
//!
//! Std's `DefaultHasher` is not guaranteed stable across releases, so seeds
//! are mixed with an explicit FNV-1a / splitmix64 combination instead.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(init: u64, bytes: &[u8]) -> u64 {
    let mut h = init;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with any number of string salts into one 64-bit seed.
pub fn mix_seed(base: u64, salts: &[&str]) -> u64 {
    let mut h = fnv1a(FNV_OFFSET, &base.to_le_bytes());
    for s in salts {
        h = fnv1a(h, s.as_bytes());
        h = fnv1a(h, &[0xff]); // separator so ("ab","c") != ("a","bc")
    }
    splitmix64(h)
}

/// ChaCha stream seeded from `mix_seed(base, salts)`.
pub fn rng_for(base: u64, salts: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(base, salts))
}
