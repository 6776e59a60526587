use rand::Rng;
use tch::{nn, Kind, Tensor};

use super::layers::{leaky_relu, BatchNorm, Conv2d, Linear};
use super::{check_shape, Mode, IMAGE_SIZE};
use crate::error::{Error, Result};

/// Path prefix of the auxiliary classification head's parameters.
pub const Q_HEAD: &str = "q_head";
pub const D_HEAD: &str = "d_head";

const TRUNK_HIDDEN: i64 = 1000;
/// Keeps sigmoid outputs strictly inside (0, 1) in single precision.
const PROB_EPS: f64 = 1e-7;

/// Outputs of the image discriminator.
#[derive(Debug)]
pub struct DiscriminatorOutput {
    /// `N x 1` probability that each image is real.
    pub d: Tensor,
    /// `N x K` class probabilities from the auxiliary head, when it exists.
    pub q: Option<Tensor>,
    /// `N x F` flattened activations of the last convolutional layer.
    pub features: Tensor,
}

impl DiscriminatorOutput {
    pub fn q(&self) -> Result<&Tensor> {
        self.q
            .as_ref()
            .ok_or_else(|| Error::Config("the classification head is disabled".into()))
    }
}

pub(super) fn probability(logits: &Tensor) -> Tensor {
    logits.sigmoid().clamp(PROB_EPS, 1.0 - PROB_EPS)
}

#[derive(Debug)]
pub struct ImageDiscriminator {
    conv1: Conv2d,
    conv2: Conv2d,
    bn2: BatchNorm,
    conv3: Conv2d,
    bn3: BatchNorm,
    hidden: Linear,
    d_head: Linear,
    q_head: Option<Linear>,
    num_classes: Option<i64>,
    channels: i64,
}

impl ImageDiscriminator {
    pub(super) fn new<R: Rng>(
        p: &nn::Path,
        rng: &mut R,
        channels: i64,
        num_classes: Option<i64>,
        width: i64,
    ) -> Self {
        let conv1 = Conv2d::new(&(p / "conv1"), rng, channels, width, 4, 2, 1, true);
        let conv2 = Conv2d::new(&(p / "conv2"), rng, width, 2 * width, 4, 2, 1, false);
        let bn2 = BatchNorm::new(&(p / "bn2"), rng, 2 * width);
        let conv3 = Conv2d::new(&(p / "conv3"), rng, 2 * width, 4 * width, 4, 2, 1, false);
        let bn3 = BatchNorm::new(&(p / "bn3"), rng, 4 * width);
        let features = 4 * width * (IMAGE_SIZE / 8) * (IMAGE_SIZE / 8);
        let hidden = Linear::new(&(p / "fc"), rng, features, TRUNK_HIDDEN, true);
        let d_head = Linear::new(&(p / D_HEAD), rng, TRUNK_HIDDEN, 1, true);
        let q_head = num_classes.map(|k| Linear::new(&(p / Q_HEAD), rng, TRUNK_HIDDEN, k, true));
        Self {
            conv1,
            conv2,
            bn2,
            conv3,
            bn3,
            hidden,
            d_head,
            q_head,
            num_classes,
            channels,
        }
    }

    pub fn num_classes(&self) -> Option<i64> {
        self.num_classes
    }

    pub fn channels(&self) -> i64 {
        self.channels
    }

    /// Flattened output of the last convolutional layer.
    pub fn features(&self, images: &Tensor, mode: Mode) -> Result<Tensor> {
        check_shape(
            "image discriminator input",
            images,
            &[None, Some(self.channels), Some(IMAGE_SIZE), Some(IMAGE_SIZE)],
        )?;
        let h = leaky_relu(&self.conv1.forward(images));
        let h = leaky_relu(&self.bn2.forward(&self.conv2.forward(&h), mode));
        let h = leaky_relu(&self.bn3.forward(&self.conv3.forward(&h), mode));
        Ok(h.flatten(1, -1))
    }

    pub fn forward(&self, images: &Tensor, mode: Mode) -> Result<DiscriminatorOutput> {
        let features = self.features(images, mode)?;
        let hidden = leaky_relu(&self.hidden.forward(&features));
        let d = probability(&self.d_head.forward(&hidden));
        let q = self
            .q_head
            .as_ref()
            .map(|head| head.forward(&hidden).softmax(-1, Kind::Float));
        Ok(DiscriminatorOutput { d, q, features })
    }
}

/// Four fully connected layers (1000, 500, 200, 1) on the code, with the condition
/// concatenated when `cond_dim > 0`.
#[derive(Debug)]
pub struct CodeDiscriminator {
    layers: Vec<Linear>,
    code_dim: i64,
    cond_dim: i64,
}

impl CodeDiscriminator {
    pub(super) fn new<R: Rng>(p: &nn::Path, rng: &mut R, code_dim: i64, cond_dim: i64) -> Self {
        let sizes = [code_dim + cond_dim, 1000, 500, 200, 1];
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&(p / format!("fc{}", i + 1)), rng, w[0], w[1], true))
            .collect();
        Self {
            layers,
            code_dim,
            cond_dim,
        }
    }

    pub fn cond_dim(&self) -> i64 {
        self.cond_dim
    }

    pub fn forward(&self, codes: &Tensor, condition: Option<&Tensor>, _mode: Mode) -> Result<Tensor> {
        check_shape("code discriminator input", codes, &[None, Some(self.code_dim)])?;
        let mut h = match (condition, self.cond_dim) {
            (None, 0) => codes.shallow_clone(),
            (Some(c), k) if k > 0 => {
                check_shape("code discriminator condition", c, &[Some(codes.size()[0]), Some(k)])?;
                Tensor::cat(&[codes, c], 1)
            }
            (Some(_), _) => {
                return Err(Error::Shape("class-agnostic code discriminator given a condition".into()))
            }
            (None, k) => {
                return Err(Error::Shape(format!("code discriminator expects a {k}-way condition")))
            }
        };
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h);
            if i < last {
                h = leaky_relu(&h);
            }
        }
        Ok(probability(&h))
    }
}
