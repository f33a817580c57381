//! Seeded random streams.
//!
//! Every consumer owns its own stream. Parallel work derives one sub-stream
//! per fixed-size chunk from a master seed, so results never depend on the
//! number of workers or on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The random stream used throughout the lab.
pub type LabRng = ChaCha8Rng;

/// Builds a stream from a 64-bit seed.
pub fn stream(seed: u64) -> LabRng {
    LabRng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of sub-stream `k` under `master`. Fixed mixing, stable across releases.
pub fn derive_seed(master: u64, k: u64) -> u64 {
    splitmix64(splitmix64(master) ^ splitmix64(k.wrapping_add(0x632B_E59B_D9B4_E019)))
}
