//! Deterministic random streams.
//!
//! Sequential state (advection, seeding) uses ChaCha8 generators derived from
//! the run seed and a stream tag. Per-droplet and per-frame draws that may run
//! in parallel use a counter-based hash so the value depends only on
//! `(seed, stream, a, b)` and never on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named sub-streams of a run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Seeding = 1,
    Advection = 2,
    Switching = 3,
    Noise = 4,
    Clutter = 5,
    Tracking = 6,
    Misc = 7,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with up to three counters into a 64-bit value.
#[inline]
pub fn mix(seed: u64, stream: Stream, a: u64, b: u64) -> u64 {
    let mut h = splitmix64(seed ^ (stream as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93));
    h = splitmix64(h ^ a);
    splitmix64(h ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Uniform draw in [0, 1) from the counter-based hash.
#[inline]
pub fn uniform(seed: u64, stream: Stream, a: u64, b: u64) -> f64 {
    (mix(seed, stream, a, b) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Seeded ChaCha8 generator for a sub-stream (and optional index).
pub fn stream_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, stream, index, 0))
}
