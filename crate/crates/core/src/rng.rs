//! Seeded random streams.
//!
//! Every consumer of randomness derives its own ChaCha8 stream from the
//! master seed and a fixed tag, so adding a consumer never shifts the numbers
//! another one sees.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::Tensor;

pub type SeededRng = ChaCha8Rng;

/// Stream tags used across the crate.
pub mod tag {
    pub const DATA: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const INIT_ENCODER: u64 = 3;
    pub const INIT_DECODER: u64 = 4;
    pub const INIT_GENERATOR: u64 = 5;
    pub const SHUFFLE: u64 = 6;
    pub const NOISE: u64 = 7;
    pub const SAMPLE: u64 = 8;
    pub const EVAL: u64 = 9;
    pub const PROJECTION: u64 = 10;
    pub const INTERPOLATE: u64 = 11;
}

/// Independent stream `tag` of the master seed.
pub fn stream(seed: u64, tag: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng
}

/// Stream `tag` further split by a counter (epoch, batch, ...).
pub fn substream(seed: u64, tag: u64, counter: u64) -> SeededRng {
    stream(seed, (tag << 40) | (counter & ((1 << 40) - 1)))
}

/// `n × d` matrix of independent standard normal draws.
pub fn normal_matrix<R: Rng + ?Sized>(rng: &mut R, n: usize, d: usize) -> Tensor {
    let data = (0..n * d).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::matrix(n, d, data).expect("n × d")
}
