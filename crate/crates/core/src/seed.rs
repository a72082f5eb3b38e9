//! Seed derivation.
//!
//! Every stochastic stage draws from a generator seeded by mixing the
//! top-level seed with a stage tag (and optional indices), so stages never
//! share a stream and any single stage can be replayed in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn tag_hash(tag: &str) -> u64 {
    // FNV-1a
    tag.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Derive a child seed from `base`, a stage tag and a list of indices.
pub fn derive(base: u64, tag: &str, indices: &[u64]) -> u64 {
    let mut s = mix64(base ^ tag_hash(tag));
    for &i in indices {
        s = mix64(s ^ i);
    }
    s
}

pub fn rng(base: u64, tag: &str, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(base, tag, indices))
}
