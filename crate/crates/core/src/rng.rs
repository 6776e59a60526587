//! Seeded randomness. All draws go through ChaCha streams so that runs are
//! reproducible independently of libtorch's global generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tch::{Kind, Tensor};

/// Distinct streams derived from one seed.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Noise = 2,
    Shuffle = 3,
    Sample = 4,
    Synthetic = 5,
    Split = 6,
}

pub fn stream(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Standard-normal draws shaped `dims`, scaled by `std` and shifted by `mean`.
pub fn normal<R: Rng>(rng: &mut R, dims: &[i64], mean: f32, std: f32) -> Tensor {
    let n: i64 = dims.iter().product();
    let data: Vec<f32> = (0..n)
        .map(|_| mean + std * rng.sample::<f32, _>(StandardNormal))
        .collect();
    Tensor::from_slice(&data).reshape(dims)
}

/// Uniform category indices in `[0, k)`.
pub fn categories<R: Rng>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..k)).collect()
}

/// One-hot rows for `labels` over `k` classes, as an `n x k` float tensor.
pub fn one_hot(labels: &[usize], k: usize) -> Tensor {
    let mut data = vec![0f32; labels.len() * k];
    for (row, &label) in labels.iter().enumerate() {
        data[row * k + label] = 1.0;
    }
    Tensor::from_slice(&data).reshape([labels.len() as i64, k as i64])
}

pub fn labels_tensor(labels: &[usize]) -> Tensor {
    let data: Vec<i64> = labels.iter().map(|&l| l as i64).collect();
    Tensor::from_slice(&data).to_kind(Kind::Int64)
}

/// A stream that additionally depends on the epoch index.
pub fn epoch_stream(seed: u64, which: Stream, epoch: u64) -> ChaCha8Rng {
    let mixed = seed ^ epoch.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    stream(mixed, which)
}
