//! Counter-based random streams.
//!
//! Every random draw is taken from a stream identified by
//! `(seed, slot, da, iteration)`, so results do not depend on the order in
//! which DA updates are evaluated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Iteration index reserved for the draw that initializes a DA.
pub const INIT_ITERATION: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub slot: u64,
    pub da: u64,
    pub iteration: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a sequence of words into one well-distributed 64-bit value.
pub fn mix(words: &[u64]) -> u64 {
    words.iter().fold(0x6a09_e667_f3bc_c909, |h, &w| splitmix(h ^ splitmix(w)))
}

impl StreamKey {
    pub fn new(seed: u64, slot: usize, da: u32, iteration: u64) -> Self {
        Self {
            seed,
            slot: slot as u64,
            da: da as u64,
            iteration,
        }
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(mix(&[self.seed, self.slot, self.da, self.iteration]))
    }
}
