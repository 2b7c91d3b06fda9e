//! Named deterministic RNG streams derived from one root seed.
//!
//! Each consumer (random-search draws, beam evaluation order, TS pool, TS
//! draw, synthetic target, ...) gets its own stream so adding samples to one
//! phase never perturbs another. Stream derivation is a fixed FNV-1a mix,
//! stable across platforms and runs.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x00000100000001b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// splitmix64 finalizer; decorrelates nearby seeds.
pub fn mix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Deterministic 64-bit seed for the stream `name` under `root`.
pub fn stream_seed(root: u64, name: &str) -> u64 {
    mix(root ^ fnv1a(name.as_bytes()))
}

/// RNG for the named stream.
pub fn stream_rng(root: u64, name: &str) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(stream_seed(root, name))
}

/// Stable hash of arbitrary text, for mixing identifiers into seeds.
pub fn text_seed(text: &str) -> u64 {
    fnv1a(text.as_bytes())
}
