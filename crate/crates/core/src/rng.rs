//! Seeded random substreams.
//!
//! Every random draw in the engines comes from a ChaCha stream keyed by
//! `(seed, purpose, a, b)`, typically `(seed, purpose, step, particle)`.
//! Work can therefore be split across any number of threads without
//! changing a single output bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a substream is used for. Distinct purposes never share a key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    InitialState = 1,
    Predict = 2,
    Resample = 3,
    ParamPrior = 4,
    Jitter = 5,
    Observation = 6,
    Band = 7,
    RateCheck = 8,
    Cell = 9,
    Test = 10,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Substreams {
    seed: u64,
}

impl Substreams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rng(&self, purpose: Purpose, a: u64, b: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&(purpose as u64).to_le_bytes());
        key[16..24].copy_from_slice(&a.to_le_bytes());
        key[24..32].copy_from_slice(&b.to_le_bytes());
        ChaCha8Rng::from_seed(key)
    }

    /// Derive an independent child seed, e.g. one per grid cell.
    pub fn child_seed(&self, purpose: Purpose, index: u64) -> u64 {
        use rand::RngCore;
        self.rng(purpose, index, u64::MAX).next_u64()
    }
}
