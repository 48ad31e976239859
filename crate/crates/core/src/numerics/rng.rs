//! Seeded, splittable random streams.
//!
//! Every stochastic routine takes an [`RngState`] rather than a live generator.
//! Child states are derived by hashing tags into the seed, so a cell, an
//! iteration, or a restart always sees the same numbers no matter how work is
//! scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// Generator used for every stream in the crate.
pub type Stream = ChaCha12Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        RngState { seed }
    }

    /// Child state keyed by `tag`. Distinct tags give independent streams.
    pub fn derive(&self, tag: u64) -> RngState {
        RngState {
            seed: splitmix64(self.seed ^ splitmix64(tag.wrapping_add(0x9e37_79b9_7f4a_7c15))),
        }
    }

    pub fn derive_path(&self, tags: &[u64]) -> RngState {
        tags.iter().fold(*self, |s, &t| s.derive(t))
    }

    /// A fresh generator positioned at the start of this state's stream.
    pub fn stream(&self) -> Stream {
        ChaCha12Rng::seed_from_u64(self.seed)
    }
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fisher-Yates shuffle of `0..n`.
pub fn permutation(n: usize, rng: &mut Stream) -> Vec<usize> {
    use rand::Rng;
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

/// Draws `k` distinct indices from `0..n` (all of them, in order, when `k >= n`).
pub fn subsample(n: usize, k: usize, rng: &mut Stream) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    let mut idx = permutation(n, rng);
    idx.truncate(k);
    idx.sort_unstable();
    idx
}
