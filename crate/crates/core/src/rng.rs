//! Labeled RNG streams derived from a single master seed.
//!
//! Every consumer of randomness (environment, agent, planner, training
//! shuffles, network init) draws from its own stream, seeded from
//! `(master_seed, label)`. Adding draws to one stream never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub mod labels {
    pub const INIT: &str = "init";
    pub const ENV: &str = "env";
    pub const AGENT: &str = "agent";
    pub const PLANNER: &str = "planner";
    pub const TRAIN: &str = "train";
    pub const EVAL_ENV: &str = "eval/env";
    pub const EVAL_AGENT: &str = "eval/agent";
    pub const EVAL_PLANNER: &str = "eval/planner";
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the stream named `label` under `master_seed`.
pub fn stream_seed(master_seed: u64, label: &str) -> u64 {
    mix64(mix64(master_seed ^ 0x9e37_79b9_7f4a_7c15) ^ fnv1a64(label.as_bytes()))
}

pub fn stream(master_seed: u64, label: &str) -> StreamRng {
    ChaCha8Rng::seed_from_u64(stream_seed(master_seed, label))
}

/// Child stream of a child stream, e.g. one per planner rollout.
pub fn substream(master_seed: u64, label: &str, index: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(mix64(stream_seed(master_seed, label) ^ mix64(index)))
}
