//! Schedule-independent random substreams.
//!
//! A run owns one 64-bit master seed. Every random draw happens on a
//! substream identified by `(purpose tag, index, replicate)`, so work can
//! be split across threads without changing any sampled value.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fold several words into one seed. Order matters.
pub fn combine(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x6A09_E667_F3BC_C909u64, |acc, &w| mix64(acc ^ mix64(w)))
}

/// Purpose tags. Values are part of the reproducibility contract; never renumber.
pub mod tag {
    pub const DESIGN: u64 = 1;
    pub const COEFFICIENTS: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const RESAMPLE: u64 = 4;
    pub const KNOCKOFF: u64 = 5;
    pub const CV_FOLDS: u64 = 6;
    pub const COORD_SUBSET: u64 = 7;
    pub const CRT: u64 = 8;
    pub const THREE_POINT: u64 = 9;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Substream {
    pub seed: u64,
    pub tag: u64,
    pub index: u64,
    pub replicate: u64,
}

impl Substream {
    pub fn new(seed: u64, tag: u64, index: u64, replicate: u64) -> Self {
        Substream {
            seed,
            tag,
            index,
            replicate,
        }
    }

    pub fn root(seed: u64) -> Self {
        Substream::new(seed, 0, 0, 0)
    }

    pub fn with_tag(self, tag: u64) -> Self {
        Substream { tag, ..self }
    }

    pub fn with_index(self, index: u64) -> Self {
        Substream { index, ..self }
    }

    pub fn with_replicate(self, replicate: u64) -> Self {
        Substream { replicate, ..self }
    }

    /// Nest: the current stream becomes the master seed of a fresh one.
    pub fn child(self, tag: u64, index: u64) -> Self {
        Substream::new(self.mixed(), tag, index, 0)
    }

    pub fn mixed(&self) -> u64 {
        combine(&[self.seed, self.tag, self.index, self.replicate])
    }

    pub fn rng(&self) -> StreamRng {
        ChaCha8Rng::seed_from_u64(self.mixed())
    }
}
