//! Seeded random streams.
//!
//! Every consumer gets its own ChaCha stream keyed by the master seed, so
//! results never depend on the order in which streams are drawn from.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Stream reserved for sampling the radial basis centers.
const CENTER_STREAM: u64 = u64::MAX;

/// Child stream for trajectory `index` of a dataset.
pub fn trajectory_stream(master_seed: u64, index: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

pub fn center_stream(master_seed: u64) -> Stream {
    trajectory_stream(master_seed, CENTER_STREAM)
}

pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}
