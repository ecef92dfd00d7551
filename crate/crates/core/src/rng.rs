//! Seeded randomness. Every stochastic operation in the crate draws from a
//! [`ChaCha12Rng`] derived from a single experiment seed plus a stream name,
//! so independent pipeline stages (synthesis, training, evaluation) stay
//! reproducible and decoupled: reseeding one stream never perturbs another.

use rand_chacha::rand_core::SeedableRng;
pub use rand_chacha::ChaCha12Rng;

/// FNV-1a over the stream label, folded into the experiment seed.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// RNG for the named sub-stream of `seed`.
pub fn stream_rng(seed: u64, name: &str) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed ^ fnv1a(name.as_bytes()))
}

/// RNG for a per-item sub-stream, e.g. one album out of a generation run.
pub fn indexed_rng(seed: u64, name: &str, index: u64) -> ChaCha12Rng {
    let mut rng = stream_rng(seed, name);
    rng.set_stream(index.wrapping_add(1));
    rng
}
