//! Named random streams derived from one run seed.
//!
//! Every consumer draws from its own ChaCha stream, so adding draws in one
//! place never shifts the numbers seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const PARTITION: u64 = 1;
pub const SERVER: u64 = 2;
pub const SPLIT: u64 = 3;
const CLIENT_BASE: u64 = 1 << 32;

pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Sampling stream of client `k`; centralized trainers use client 0.
pub fn client(seed: u64, k: usize) -> ChaCha8Rng {
    stream(seed, CLIENT_BASE + k as u64)
}
