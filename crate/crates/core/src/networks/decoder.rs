use rand::Rng;
use tch::{nn, Tensor};

use super::layers::{BatchNorm, Conv2d, ConvTranspose2d};
use super::residual::{Resample, ResidualBlock};
use super::{check_shape, Mode};
use crate::error::Result;

/// Maps a code, viewed as a 1x1 feature map, through a 4x4 transposed convolution
/// and three upsampling residual stages to a tanh image.
#[derive(Debug)]
pub struct Decoder {
    lift: ConvTranspose2d,
    lift_bn: BatchNorm,
    blocks: Vec<ResidualBlock>,
    out: Conv2d,
    code_dim: i64,
}

impl Decoder {
    pub(super) fn new<R: Rng>(
        p: &nn::Path,
        rng: &mut R,
        channels: i64,
        code_dim: i64,
        width: i64,
    ) -> Self {
        let lift = ConvTranspose2d::new(&(p / "lift"), rng, code_dim, 8 * width, 4, 1, 0);
        let lift_bn = BatchNorm::new(&(p / "lift_bn"), rng, 8 * width);
        let stages = [(8 * width, 4 * width), (4 * width, 2 * width), (2 * width, width)];
        let blocks = stages
            .iter()
            .enumerate()
            .map(|(i, &(cin, cout))| {
                ResidualBlock::new(&(p / format!("block{i}")), rng, cin, cout, Resample::Up)
            })
            .collect();
        let out = Conv2d::new(&(p / "out"), rng, width, channels, 3, 1, 1, true);
        Self {
            lift,
            lift_bn,
            blocks,
            out,
            code_dim,
        }
    }

    pub fn code_dim(&self) -> i64 {
        self.code_dim
    }

    pub fn forward(&self, codes: &Tensor, mode: Mode) -> Result<Tensor> {
        check_shape("decoder input", codes, &[None, Some(self.code_dim)])?;
        let n = codes.size()[0];
        let map = codes.reshape([n, self.code_dim, 1, 1]);
        let mut h = self.lift_bn.forward(&self.lift.forward(&map), mode).relu();
        for block in &self.blocks {
            h = block.forward(&h);
        }
        Ok(self.out.forward(&h).tanh())
    }
}
