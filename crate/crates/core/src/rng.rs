//! Counter-based random streams.
//!
//! Every chain, iteration and purpose gets its own generator keyed by
//! `(seed, chain, iteration, tag)`, so results do not depend on how work is
//! split across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::Point;

/// Purpose tags keeping streams for different draws disjoint.
pub mod tags {
    pub const INITIAL: u64 = 1;
    pub const RENOISE: u64 = 2;
    pub const KERNEL: u64 = 3;
    pub const RESAMPLE: u64 = 4;
    pub const REFERENCE: u64 = 5;
    pub const BOOTSTRAP: u64 = 6;
}

pub fn stream(seed: u64, chain: u64, iteration: u64, tag: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&chain.to_le_bytes());
    key[16..24].copy_from_slice(&iteration.to_le_bytes());
    key[24..].copy_from_slice(&tag.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

pub fn normal_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Point {
    Point::from_iterator(dim, (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)))
}
