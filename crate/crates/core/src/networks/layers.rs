//! Minimal layer set on top of libtorch's functional ops. Parameters are drawn
//! from the caller's seeded generator rather than libtorch's global one.

use rand::Rng;
use tch::{nn, Tensor};

use super::Mode;
use crate::rng;

const WEIGHT_STD: f32 = 0.02;
const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;
pub const LEAKY_SLOPE: f64 = 0.2;

fn weight<R: Rng>(p: &nn::Path, rng: &mut R, dims: &[i64]) -> Tensor {
    p.add("weight", rng::normal(rng, dims, 0.0, WEIGHT_STD), true)
}

fn zero_bias(p: &nn::Path, size: i64) -> Tensor {
    p.add("bias", Tensor::zeros([size], (tch::Kind::Float, p.device())), true)
}

#[derive(Debug)]
pub struct Conv2d {
    weight: Tensor,
    bias: Option<Tensor>,
    stride: i64,
    padding: i64,
}

impl Conv2d {
    pub fn new<R: Rng>(
        p: &nn::Path,
        rng: &mut R,
        in_channels: i64,
        out_channels: i64,
        kernel: i64,
        stride: i64,
        padding: i64,
        bias: bool,
    ) -> Self {
        let weight = weight(p, rng, &[out_channels, in_channels, kernel, kernel]);
        let bias = bias.then(|| zero_bias(p, out_channels));
        Self {
            weight,
            bias,
            stride,
            padding,
        }
    }

    pub fn forward(&self, xs: &Tensor) -> Tensor {
        xs.conv2d(
            &self.weight,
            self.bias.as_ref(),
            [self.stride, self.stride],
            [self.padding, self.padding],
            [1, 1],
            1,
        )
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }
}

/// Transposed convolution, used once to lift a 1x1 code to a 4x4 map.
#[derive(Debug)]
pub struct ConvTranspose2d {
    weight: Tensor,
    stride: i64,
    padding: i64,
}

impl ConvTranspose2d {
    pub fn new<R: Rng>(
        p: &nn::Path,
        rng: &mut R,
        in_channels: i64,
        out_channels: i64,
        kernel: i64,
        stride: i64,
        padding: i64,
    ) -> Self {
        let weight = weight(p, rng, &[in_channels, out_channels, kernel, kernel]);
        Self {
            weight,
            stride,
            padding,
        }
    }

    pub fn forward(&self, xs: &Tensor) -> Tensor {
        xs.conv_transpose2d(
            &self.weight,
            None::<Tensor>,
            [self.stride, self.stride],
            [self.padding, self.padding],
            [0, 0],
            1,
            [1, 1],
        )
    }
}

#[derive(Debug)]
pub struct Linear {
    weight: Tensor,
    bias: Option<Tensor>,
}

impl Linear {
    pub fn new<R: Rng>(p: &nn::Path, rng: &mut R, inputs: i64, outputs: i64, bias: bool) -> Self {
        let weight = weight(p, rng, &[outputs, inputs]);
        let bias = bias.then(|| zero_bias(p, outputs));
        Self { weight, bias }
    }

    pub fn forward(&self, xs: &Tensor) -> Tensor {
        xs.linear(&self.weight, self.bias.as_ref())
    }
}

/// Batch normalization over dimension 1 for both `N x C` and `N x C x H x W` inputs.
#[derive(Debug)]
pub struct BatchNorm {
    scale: Tensor,
    shift: Tensor,
    running_mean: Tensor,
    running_var: Tensor,
}

impl BatchNorm {
    pub fn new<R: Rng>(p: &nn::Path, rng: &mut R, features: i64) -> Self {
        let scale = p.add("weight", rng::normal(rng, &[features], 1.0, WEIGHT_STD), true);
        let shift = zero_bias(p, features);
        let running_mean = p.zeros_no_train("running_mean", &[features]);
        let running_var = p.ones_no_train("running_var", &[features]);
        Self {
            scale,
            shift,
            running_mean,
            running_var,
        }
    }

    pub fn forward(&self, xs: &Tensor, mode: Mode) -> Tensor {
        let (mean, var, training) = match mode {
            Mode::Train => (Some(&self.running_mean), Some(&self.running_var), true),
            Mode::Fixed => (None, None, true),
            Mode::Eval => (Some(&self.running_mean), Some(&self.running_var), false),
        };
        xs.batch_norm(
            Some(&self.scale),
            Some(&self.shift),
            mean,
            var,
            training,
            BN_MOMENTUM,
            BN_EPS,
            false,
        )
    }
}

/// Leaky rectifier with slope 0.2; libtorch's default slope is 0.01.
pub fn leaky_relu(xs: &Tensor) -> Tensor {
    xs.maximum(&(xs * LEAKY_SLOPE))
}
