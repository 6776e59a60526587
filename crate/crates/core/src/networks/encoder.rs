use rand::Rng;
use tch::{nn, Tensor};

use super::layers::{BatchNorm, Conv2d, Linear};
use super::residual::{Resample, ResidualBlock};
use super::{check_shape, Mode, IMAGE_SIZE};
use crate::error::Result;

/// Convolutional encoder: stride-2 stem, four residual stages, global average
/// pooling and a two-layer head.
#[derive(Debug)]
pub struct Encoder {
    stem: Conv2d,
    blocks: Vec<ResidualBlock>,
    hidden: Linear,
    hidden_bn: BatchNorm,
    out: Linear,
    channels: i64,
    code_dim: i64,
}

impl Encoder {
    pub(super) fn new<R: Rng>(
        p: &nn::Path,
        rng: &mut R,
        channels: i64,
        code_dim: i64,
        width: i64,
    ) -> Self {
        let stem = Conv2d::new(&(p / "stem"), rng, channels, width, 3, 2, 1, true);
        let stages = [
            (width, width, Resample::None),
            (width, 2 * width, Resample::Down),
            (2 * width, 4 * width, Resample::Down),
            (4 * width, 8 * width, Resample::Down),
        ];
        let blocks = stages
            .iter()
            .enumerate()
            .map(|(i, &(cin, cout, r))| ResidualBlock::new(&(p / format!("block{i}")), rng, cin, cout, r))
            .collect();
        let hidden = Linear::new(&(p / "fc1"), rng, 8 * width, 2 * code_dim, false);
        let hidden_bn = BatchNorm::new(&(p / "fc1_bn"), rng, 2 * code_dim);
        let out = Linear::new(&(p / "fc2"), rng, 2 * code_dim, code_dim, true);
        Self {
            stem,
            blocks,
            hidden,
            hidden_bn,
            out,
            channels,
            code_dim,
        }
    }

    pub fn code_dim(&self) -> i64 {
        self.code_dim
    }

    pub fn forward(&self, images: &Tensor, mode: Mode) -> Result<Tensor> {
        check_shape(
            "encoder input",
            images,
            &[None, Some(self.channels), Some(IMAGE_SIZE), Some(IMAGE_SIZE)],
        )?;
        let mut h = self.stem.forward(images).relu();
        for block in &self.blocks {
            h = block.forward(&h);
        }
        // The map is 2x2 here; pooling covers all of it.
        let pooled = h.adaptive_avg_pool2d([1, 1]).flatten(1, -1);
        let hidden = self.hidden_bn.forward(&self.hidden.forward(&pooled), mode).relu();
        Ok(self.out.forward(&hidden))
    }
}
