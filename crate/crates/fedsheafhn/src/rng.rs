//! Seed-derived random streams.
//!
//! Every source of randomness in the simulator draws from a ChaCha stream
//! keyed by the run seed plus fixed purpose tags (and, where needed, the
//! round or client index). Streams are created on demand and never carried
//! across rounds, which is what makes checkpoint resume and thread-count
//! changes bit-transparent.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::Tensor;

pub const STREAM_SBM_EDGES: u64 = 1;
pub const STREAM_SBM_FEATURES: u64 = 2;
pub const STREAM_PARTITION: u64 = 3;
pub const STREAM_SPLIT: u64 = 4;
pub const STREAM_CLIENT_INIT: u64 = 5;
pub const STREAM_SERVER_INIT: u64 = 6;
pub const STREAM_DROPOUT: u64 = 7;
pub const STREAM_ATTACK: u64 = 8;
pub const STREAM_CLIENT_ORDER: u64 = 9;

/// A ChaCha stream keyed by `(seed, tags...)`.
pub fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    for (slot, &tag) in tags.iter().enumerate() {
        let off = 8 * (1 + (slot % 3));
        let mixed = tag.wrapping_mul(0x9e37_79b9_7f4a_7c15).rotate_left((slot as u32) % 63);
        for (k, b) in key[off..off + 8].iter_mut().zip(mixed.to_le_bytes()) {
            *k ^= b;
        }
    }
    ChaCha8Rng::from_seed(key)
}

pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Tensor with i.i.d. N(0, std^2) entries.
pub fn randn(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let numel: usize = shape.iter().product();
    let data = (0..numel).map(|_| std * standard_normal(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape/data lengths agree by construction")
}

/// Glorot-uniform init for a `[fan_in x fan_out]` weight matrix.
pub fn glorot(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-a..a))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("shape/data lengths agree by construction")
}
