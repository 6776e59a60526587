use rand::Rng;
use tch::{nn, Tensor};

use super::layers::Conv2d;

/// Spatial resampling performed by a residual block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resample {
    None,
    /// Halve the spatial size with a stride-2 first convolution.
    Down,
    /// Double the spatial size with nearest-neighbour upsampling before the first convolution.
    Up,
}

/// Two 3x3 convolutions with an additive skip path and a final rectifier.
///
/// The skip path is the identity when input and output shapes agree; otherwise it
/// is a 1x1 convolution (stride 2 for `Down`, after the same upsampling for `Up`).
#[derive(Debug)]
pub struct ResidualBlock {
    first: Conv2d,
    second: Conv2d,
    projection: Option<Conv2d>,
    resample: Resample,
}

impl ResidualBlock {
    pub fn new<R: Rng>(
        p: &nn::Path,
        rng: &mut R,
        in_channels: i64,
        out_channels: i64,
        resample: Resample,
    ) -> Self {
        let stride = if resample == Resample::Down { 2 } else { 1 };
        let first = Conv2d::new(&(p / "conv1"), rng, in_channels, out_channels, 3, stride, 1, true);
        let second = Conv2d::new(&(p / "conv2"), rng, out_channels, out_channels, 3, 1, 1, true);
        let projection = (resample != Resample::None || in_channels != out_channels).then(|| {
            Conv2d::new(&(p / "skip"), rng, in_channels, out_channels, 1, stride, 0, true)
        });
        Self {
            first,
            second,
            projection,
            resample,
        }
    }

    pub fn forward(&self, xs: &Tensor) -> Tensor {
        let input = match self.resample {
            Resample::Up => {
                let (h, w) = (xs.size()[2], xs.size()[3]);
                xs.upsample_nearest2d([2 * h, 2 * w], None, None)
            }
            _ => xs.shallow_clone(),
        };
        let residual = self.second.forward(&self.first.forward(&input).relu());
        let skip = match &self.projection {
            Some(conv) => conv.forward(&input),
            None => input,
        };
        (skip + residual).relu()
    }

    /// Convolution layers in order: first, second, and the skip projection if any.
    pub fn convs(&self) -> impl Iterator<Item = &Conv2d> {
        [&self.first, &self.second]
            .into_iter()
            .chain(self.projection.as_ref())
    }
}
