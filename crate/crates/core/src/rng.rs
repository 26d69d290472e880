use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic generator for one named purpose under a user seed, so that
/// independent consumers of the same seed never share a stream.
pub fn seeded(seed: u64, purpose: &str) -> ChaCha8Rng {
    // FNV-1a over the purpose tag, mixed with the seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in purpose.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(seed ^ h.rotate_left(17))
}

pub fn seeded_n(seed: u64, purpose: &str, n: u64) -> ChaCha8Rng {
    seeded(seed.wrapping_add(n.wrapping_mul(0x9e37_79b9_7f4a_7c15)), purpose)
}
