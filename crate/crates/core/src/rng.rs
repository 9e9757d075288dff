//! Keyed random streams.
//!
//! Every random draw made by a chain comes from a ChaCha8 keystream selected by
//! the chain seed and a stream id built from `(iteration, purpose, i, j)`.
//! Draws therefore do not depend on evaluation order, so independent pieces
//! of a sweep may run concurrently without changing the trace.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for; part of the stream key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    WarpCopy = 2,
    Label = 3,
    Atom = 4,
    Scalar = 5,
    Hyper = 6,
    Alpha = 7,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for replicate or chain `index` derived from a base seed.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    splitmix(splitmix(base) ^ index.wrapping_add(0xD1B5_4A32_D192_ED03))
}

#[derive(Debug, Clone)]
pub struct StreamFactory {
    key: [u8; 32],
}

impl StreamFactory {
    pub fn new(seed: u64) -> Self {
        let mut key = [0u8; 32];
        let mut z = seed;
        for chunk in key.chunks_mut(8) {
            z = splitmix(z);
            chunk.copy_from_slice(&z.to_le_bytes());
        }
        Self { key }
    }

    pub fn stream(&self, iteration: u64, purpose: Purpose, i: u64, j: u64) -> ChaCha8Rng {
        let mut h = splitmix(iteration);
        h = splitmix(h ^ purpose as u64);
        h = splitmix(h ^ i);
        h = splitmix(h ^ j);
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(h);
        rng
    }
}
