//! Deterministic random-number plumbing.
//!
//! Every stochastic quantity in the simulator draws from a ChaCha8 stream
//! seeded from a single session seed. Independent concerns (avalanche
//! noise, modulator schedule, basis choices, …) each get their own
//! sub-stream derived from the master seed and a short textual tag, so
//! adding draws to one concern never perturbs another and any run can be
//! reproduced bit-for-bit from `(seed, tag)` pairs.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A deterministic generator for the master seed itself.
pub fn master_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A deterministic generator for one named concern under a master seed.
///
/// The tag is folded into the seed with FNV-1a and a splitmix64 finaliser,
/// so distinct tags give statistically independent streams while identical
/// `(seed, tag)` pairs always reproduce the same stream.
pub fn stream_rng(seed: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ fnv1a(tag.as_bytes())))
}

/// A deterministic generator for one indexed point of a parallel scan.
pub fn point_rng(seed: u64, tag: &str, index: u64) -> ChaCha8Rng {
    let base = splitmix64(seed ^ fnv1a(tag.as_bytes()));
    ChaCha8Rng::seed_from_u64(splitmix64(base ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
