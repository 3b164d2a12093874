//! Deterministic random streams.
//!
//! Every stream is addressed by `(seed, purpose, index)` so a trajectory draws
//! the same numbers regardless of how many workers run beside it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::grid::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    SourceCondition,
    TargetCondition,
    Shift,
    Latent,
    StepNoise,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::SourceCondition => 1,
            Purpose::TargetCondition => 2,
            Purpose::Shift => 3,
            Purpose::Latent => 4,
            Purpose::StepNoise => 5,
        }
    }
}

/// Identifier of a seeded stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamId {
    pub seed: u64,
    pub purpose: Purpose,
    pub index: u64,
}

impl StreamId {
    pub fn new(seed: u64, purpose: Purpose, index: u64) -> Self {
        Self {
            seed,
            purpose,
            index,
        }
    }

    /// Same seed and index, different purpose.
    pub fn with_purpose(self, purpose: Purpose) -> Self {
        Self { purpose, ..self }
    }

    pub fn rng(self) -> Stream {
        let mut state = self.seed;
        let mut key = [0u8; 32];
        for (chunk, word) in key
            .chunks_exact_mut(8)
            .zip([self.purpose.tag(), self.index, 0x5eed, 0xd1a])
        {
            state = splitmix64(state ^ word);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        Stream {
            id: self,
            inner: ChaCha8Rng::from_seed(key),
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct Stream {
    id: StreamId,
    inner: ChaCha8Rng,
}

impl Stream {
    pub fn id(&self) -> StreamId {
        self.id
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn normal_grid(&mut self, height: usize, width: usize) -> Grid {
        Grid::from_fn(height, width, |_, _| self.normal())
    }
}
