use rand::Rng;
use tch::{nn, Tensor};

use super::layers::{BatchNorm, Linear};
use super::{check_shape, Mode};
use crate::error::{Error, Result};

/// Two fully connected layers, both batch-normalized; the output layer is linear.
#[derive(Debug)]
pub struct CodeGenerator {
    hidden: Linear,
    hidden_bn: BatchNorm,
    out: Linear,
    out_bn: BatchNorm,
    noise_dim: i64,
    cond_dim: i64,
}

impl CodeGenerator {
    pub(super) fn new<R: Rng>(
        p: &nn::Path,
        rng: &mut R,
        noise_dim: i64,
        cond_dim: i64,
        code_dim: i64,
    ) -> Self {
        let input = noise_dim + cond_dim;
        let hidden = Linear::new(&(p / "fc1"), rng, input, 2 * input, false);
        let hidden_bn = BatchNorm::new(&(p / "fc1_bn"), rng, 2 * input);
        let out = Linear::new(&(p / "fc2"), rng, 2 * input, code_dim, false);
        let out_bn = BatchNorm::new(&(p / "fc2_bn"), rng, code_dim);
        Self {
            hidden,
            hidden_bn,
            out,
            out_bn,
            noise_dim,
            cond_dim,
        }
    }

    pub fn noise_dim(&self) -> i64 {
        self.noise_dim
    }

    pub fn cond_dim(&self) -> i64 {
        self.cond_dim
    }

    /// The condition, when the generator has one, is concatenated after the noise.
    pub fn forward(&self, noise: &Tensor, condition: Option<&Tensor>, mode: Mode) -> Result<Tensor> {
        check_shape("code generator noise", noise, &[None, Some(self.noise_dim)])?;
        let input = match (condition, self.cond_dim) {
            (None, 0) => noise.shallow_clone(),
            (Some(c), k) if k > 0 => {
                check_shape("code generator condition", c, &[Some(noise.size()[0]), Some(k)])?;
                Tensor::cat(&[noise, c], 1)
            }
            (Some(_), _) => {
                return Err(Error::Shape("unconditional code generator given a condition".into()))
            }
            (None, k) => {
                return Err(Error::Shape(format!("code generator expects a {k}-way condition")))
            }
        };
        let h = self.hidden_bn.forward(&self.hidden.forward(&input), mode).relu();
        Ok(self.out_bn.forward(&self.out.forward(&h), mode))
    }
}
