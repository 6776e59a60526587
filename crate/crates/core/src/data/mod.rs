//! Datasets normalized to `C x 32 x 32` images in [-1, 1], and seeded batching.

pub mod cifar;
pub mod folder;
pub mod mnist;
pub mod synthetic;

use rand::seq::SliceRandom;
use tch::{Kind, Tensor};

pub use cifar::{load_cifar10, parse_cifar10, CIFAR_RECORD_BYTES};
pub use folder::load_image_folder;
pub use mnist::{load_mnist, load_mnist_files, parse_idx_images, parse_idx_labels};
pub use synthetic::synthetic_dataset;

use crate::config::{DatasetKind, DatasetSpec};
use crate::error::{Error, Result};
use crate::networks::IMAGE_SIZE;
use crate::rng;

/// Byte value to [-1, 1]: `x / 127.5 - 1`.
pub fn normalize_byte(v: u8) -> f32 {
    v as f32 / 127.5 - 1.0
}

/// An immutable image collection with optional class labels.
#[derive(Debug)]
pub struct DatasetHandle {
    pub name: String,
    /// `N x C x 32 x 32`, values in [-1, 1].
    pub images: Tensor,
    pub labels: Option<Vec<usize>>,
    pub num_classes: Option<usize>,
}

/// One mini-batch.
#[derive(Debug)]
pub struct Batch {
    pub images: Tensor,
    pub labels: Option<Vec<usize>>,
    pub indices: Vec<usize>,
}

impl DatasetHandle {
    pub fn new(
        name: impl Into<String>,
        images: Tensor,
        labels: Option<Vec<usize>>,
        num_classes: Option<usize>,
    ) -> Result<Self> {
        let size = images.size();
        if size.len() != 4 || size[2] != IMAGE_SIZE || size[3] != IMAGE_SIZE {
            return Err(Error::Data(format!("images must be N x C x 32 x 32, got {size:?}")));
        }
        if let Some(labels) = &labels {
            if labels.len() as i64 != size[0] {
                return Err(Error::Data(format!(
                    "{} labels for {} images",
                    labels.len(),
                    size[0]
                )));
            }
            let k = num_classes.ok_or_else(|| Error::Data("labels without a class count".into()))?;
            if let Some(bad) = labels.iter().find(|&&l| l >= k) {
                return Err(Error::Data(format!("label {bad} outside [0, {k})")));
            }
        }
        Ok(Self {
            name: name.into(),
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.images.size()[0] as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> i64 {
        self.images.size()[1]
    }

    /// Materialize the samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Batch {
        let idx = Tensor::from_slice(&indices.iter().map(|&i| i as i64).collect::<Vec<_>>());
        let images = self.images.index_select(0, &idx);
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        Batch {
            images,
            labels,
            indices: indices.to_vec(),
        }
    }

    /// The first `n` samples (all of them if `n` is 0 or exceeds the size).
    pub fn take(self, n: usize) -> Self {
        if n == 0 || n >= self.len() {
            return self;
        }
        let images = self.images.narrow(0, 0, n as i64).copy();
        let labels = self.labels.map(|l| l[..n].to_vec());
        Self {
            name: self.name,
            images,
            labels,
            num_classes: self.num_classes,
        }
    }

    /// Seeded split into `(train, held_out)` with `held_out` holding `fraction` of the samples.
    pub fn split(&self, fraction: f64, seed: u64) -> (Self, Self) {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut rng::stream(seed, rng::Stream::Split));
        let held = ((self.len() as f64) * fraction).round() as usize;
        let (test_idx, train_idx) = order.split_at(held);
        let part = |idx: &[usize], suffix: &str| {
            let b = self.select(idx);
            Self {
                name: format!("{}-{suffix}", self.name),
                images: b.images,
                labels: b.labels,
                num_classes: self.num_classes,
            }
        };
        (part(train_idx, "train"), part(test_idx, "heldout"))
    }

    pub fn pixel_range(&self) -> (f64, f64) {
        (
            self.images.min().double_value(&[]),
            self.images.max().double_value(&[]),
        )
    }
}

/// Index lists for one epoch: a seeded permutation of `0..n` cut into full batches.
/// The trailing partial batch is dropped.
pub fn epoch_order(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 {
        return Err(Error::Config(format!("batch_size must be at least 2, got {batch_size}")));
    }
    if batch_size > n {
        return Err(Error::Data(format!("batch_size {batch_size} exceeds dataset size {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::epoch_stream(seed, rng::Stream::Shuffle, epoch as u64));
    Ok(order
        .chunks_exact(batch_size)
        .map(|c| c.to_vec())
        .collect())
}

/// Seeded mini-batches for `epoch`.
pub fn batches<'a>(
    dataset: &'a DatasetHandle,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<impl Iterator<Item = Batch> + 'a> {
    let order = epoch_order(dataset.len(), batch_size, seed, epoch)?;
    Ok(order.into_iter().map(move |idx| dataset.select(&idx)))
}

/// Load the dataset described by `spec`; `num_classes` sizes the synthetic corpus.
pub fn load(spec: &DatasetSpec, channels: i64, num_classes: usize, seed: u64) -> Result<DatasetHandle> {
    let data = match spec.kind {
        DatasetKind::Synthetic => synthetic_dataset(spec.synthetic_size, num_classes, seed)?,
        DatasetKind::Mnist => load_mnist(&spec.resolved_path()?)?,
        DatasetKind::Cifar10 => load_cifar10(&spec.resolved_path()?)?,
        DatasetKind::Folder => load_image_folder(&spec.resolved_path()?, channels)?,
    };
    Ok(data.take(spec.limit))
}

pub(crate) fn images_from_bytes(pixels: &[u8], n: usize, channels: usize) -> Tensor {
    let values: Vec<f32> = pixels.iter().map(|&b| normalize_byte(b)).collect();
    Tensor::from_slice(&values)
        .reshape([n as i64, channels as i64, IMAGE_SIZE, IMAGE_SIZE])
        .to_kind(Kind::Float)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drop_last_batch_count() {
        assert_eq!(epoch_order(100, 32, 1, 0).unwrap().len(), 3);
        assert!(epoch_order(10, 11, 1, 0).is_err());
        assert!(epoch_order(10, 1, 1, 0).is_err());
    }

    #[test]
    fn epochs_permute_the_same_multiset() {
        let a = epoch_order(60, 6, 9, 0).unwrap();
        let b = epoch_order(60, 6, 9, 1).unwrap();
        assert_eq!(a, epoch_order(60, 6, 9, 0).unwrap());
        assert_ne!(a, b);
        let mut fa: Vec<usize> = a.concat();
        let mut fb: Vec<usize> = b.concat();
        fa.sort();
        fb.sort();
        assert_eq!(fa, fb);
        assert_eq!(fa, (0..60).collect::<Vec<_>>());
    }

    #[test]
    fn normalization_endpoints() {
        assert_eq!(normalize_byte(0), -1.0);
        assert_eq!(normalize_byte(255), 1.0);
    }
}
