//! Deterministic random streams.
//!
//! Every random decision in the pipeline draws from a stream derived from
//! `(global seed, example id, purpose)`. Streams are independent of
//! iteration order and thread scheduling, which is what makes dataset
//! generation reproducible under any `--threads` setting.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a. Used instead of `std::hash` so derived seeds survive
/// compiler and stdlib upgrades.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Collapse `(seed, parts...)` into one 64-bit stream seed. Parts are
/// length-prefixed so `["ab","c"]` and `["a","bc"]` derive different keys.
pub fn derive_seed(seed: u64, parts: &[&str]) -> u64 {
    let mut buf = Vec::with_capacity(8 + parts.iter().map(|p| p.len() + 8).sum::<usize>());
    buf.extend_from_slice(&seed.to_le_bytes());
    for part in parts {
        buf.extend_from_slice(&(part.len() as u64).to_le_bytes());
        buf.extend_from_slice(part.as_bytes());
    }
    fnv1a64(&buf)
}

/// A seeded stream keyed by `(seed, parts...)`.
pub fn stream(seed: u64, parts: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, parts))
}
