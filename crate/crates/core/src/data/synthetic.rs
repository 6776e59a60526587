//! Procedural 1x32x32 corpus for tests and demos that need no downloads.
//!
//! Class `c` draws primitive `c % 4` (bar, disk, cross, checker patch) around
//! anchor `c / 4`; size, offset and intensity are jittered per image.

use rand::Rng;

use super::DatasetHandle;
use crate::error::{Error, Result};
use crate::networks::IMAGE_SIZE;
use crate::rng;

const ANCHORS: [(i32, i32); 5] = [(16, 16), (10, 10), (22, 22), (10, 22), (22, 10)];

fn render<R: Rng>(class: usize, g: &mut R, out: &mut [f32]) {
    let side = IMAGE_SIZE as i32;
    let (ax, ay) = ANCHORS[(class / 4) % ANCHORS.len()];
    let cx = ax + g.random_range(-2..=2);
    let cy = ay + g.random_range(-2..=2);
    let r = g.random_range(5..=8);
    let ink: f32 = g.random_range(0.6..=1.0);
    for y in 0..side {
        for x in 0..side {
            let (dx, dy) = (x - cx, y - cy);
            let on = match class % 4 {
                0 => dy.abs() <= 2 && dx.abs() <= r + 3,
                1 => dx * dx + dy * dy <= r * r,
                2 => (dx.abs() <= 1 && dy.abs() <= r) || (dy.abs() <= 1 && dx.abs() <= r),
                _ => dx.abs() <= r && dy.abs() <= r && ((x / 3 + y / 3) % 2 == 0),
            };
            out[(y * side + x) as usize] = if on { ink } else { -1.0 };
        }
    }
}

/// `n` images with labels assigned round-robin over `num_classes`.
pub fn synthetic_dataset(n: usize, num_classes: usize, seed: u64) -> Result<DatasetHandle> {
    if num_classes == 0 || n < num_classes {
        return Err(Error::Config(format!(
            "synthetic data needs n >= num_classes >= 1, got n={n}, classes={num_classes}"
        )));
    }
    let plane = (IMAGE_SIZE * IMAGE_SIZE) as usize;
    let mut g = rng::stream(seed, rng::Stream::Synthetic);
    let mut pixels = vec![0f32; n * plane];
    let labels: Vec<usize> = (0..n).map(|i| i % num_classes).collect();
    for (i, &label) in labels.iter().enumerate() {
        render(label, &mut g, &mut pixels[i * plane..(i + 1) * plane]);
    }
    let images = tch::Tensor::from_slice(&pixels).reshape([n as i64, 1, IMAGE_SIZE, IMAGE_SIZE]);
    DatasetHandle::new("synthetic", images, Some(labels), Some(num_classes))
}
