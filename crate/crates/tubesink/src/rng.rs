//! Deterministic stream derivation. Every random decision in the pipeline is
//! a pure function of (seed, domain label, counters), so any part of a run
//! can be replayed without threading a mutable generator through the code.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; decorrelates nearby inputs.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// A seeded generator for the stream identified by `(seed, label, a, b)`.
pub fn stream(seed: u64, label: &str, a: u64, b: u64) -> ChaCha8Rng {
    let mut h = mix(seed);
    for byte in label.bytes() {
        h = mix(h ^ u64::from(byte));
    }
    h = mix(h ^ a);
    h = mix(h ^ b);
    ChaCha8Rng::seed_from_u64(h)
}
