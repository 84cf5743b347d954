//! Seed derivation so every (trial, host) pair draws an independent,
//! reproducible stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags for the per-host generators.
pub const TAG_GATEWAY: u64 = 1;
pub const TAG_RELAY: u64 = 2;
pub const TAG_UNIT: u64 = 16;

pub fn trial_seed(seed: u64, trial: u32) -> u64 {
    seed.wrapping_add(trial as u64)
}

pub fn host_rng(seed: u64, trial: u32, tag: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(seed, trial));
    rng.set_stream(tag);
    rng
}
