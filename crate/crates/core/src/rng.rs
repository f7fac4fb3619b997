//! Named random streams derived from a single run seed.
//!
//! Each consumer (initialization, shuffling, dropout, sampling) draws from
//! its own stream, so adding a new consumer never shifts the draws of an
//! existing one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedStreams {
    seed: u64,
}

impl SeedStreams {
    pub fn new(seed: u64) -> Self {
        SeedStreams { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, name: &str) -> StreamRng {
        self.indexed(name, 0)
    }

    /// Stream `name` at sub-index `index` (epoch, batch, ...).
    pub fn indexed(&self, name: &str, index: u64) -> StreamRng {
        let key = splitmix64(self.seed ^ splitmix64(fnv1a(name.as_bytes()) ^ splitmix64(index)));
        ChaCha8Rng::seed_from_u64(key)
    }
}

/// `rows×cols` tensor with entries drawn from `uniform(-bound, bound)`.
pub fn uniform_tensor<R: Rng>(rng: &mut R, rows: usize, cols: usize, bound: f64) -> Tensor {
    let values = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..=bound))
        .collect();
    Tensor::new(rows, cols, values).expect("extent matches")
}
