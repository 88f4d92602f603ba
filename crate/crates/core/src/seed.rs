//! Seed fan-out.
//!
//! Every random stream in the toolkit is derived from one top-level seed:
//!
//! ```text
//! mixed = seed ^ fnv1a64(module) ^ rotl(fnv1a64(purpose), 21) ^ rotl(splitmix64(index), 42)
//! stream_seed = splitmix64(splitmix64(mixed))
//! ```
//!
//! The stream seed initializes a ChaCha8 generator. The
//! derivation uses only fixed-width integer arithmetic, so streams are
//! identical on every platform and toolchain.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn fnv1a64(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed for `(module, purpose, index)` from `seed`.
pub fn derive_seed(seed: u64, module: &str, purpose: &str, index: u64) -> u64 {
    let mixed = seed
        ^ fnv1a64(module)
        ^ fnv1a64(purpose).rotate_left(21)
        ^ splitmix64(index).rotate_left(42);
    splitmix64(splitmix64(mixed))
}

/// Hash of a string key, for per-sample streams keyed by sample id.
pub fn key_index(key: &str) -> u64 {
    fnv1a64(key)
}

pub fn rng(seed: u64, module: &str, purpose: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, module, purpose, index))
}
