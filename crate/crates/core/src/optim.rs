//! Adaptive moment estimation with state that can be checkpointed.

use std::collections::BTreeMap;

use tch::{Kind, Tensor};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam over a fixed, named set of parameters.
#[derive(Debug)]
pub struct Adam {
    config: AdamConfig,
    params: Vec<(String, Tensor)>,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    steps: i64,
}

impl Adam {
    pub fn new(params: Vec<(String, Tensor)>, config: AdamConfig) -> Self {
        let first = params.iter().map(|(_, p)| p.zeros_like()).collect();
        let second = params.iter().map(|(_, p)| p.zeros_like()).collect();
        Self {
            config,
            params,
            first,
            second,
            steps: 0,
        }
    }

    pub fn parameters(&self) -> impl Iterator<Item = &Tensor> {
        self.params.iter().map(|(_, p)| p)
    }

    pub fn steps(&self) -> i64 {
        self.steps
    }

    /// Gradients of `loss` with respect to this optimizer's parameters. Parameters
    /// the loss does not reach get zero gradients.
    pub fn gradients(&self, loss: &Tensor, keep_graph: bool) -> Vec<Tensor> {
        let inputs: Vec<&Tensor> = self.parameters().collect();
        let grads = Tensor::run_backward(&[loss], &inputs, keep_graph, false);
        grads
            .into_iter()
            .zip(&inputs)
            .map(|(g, p)| if g.defined() { g } else { p.zeros_like() })
            .collect()
    }

    /// Apply one update with externally computed gradients (descent direction).
    pub fn step(&mut self, grads: &[Tensor]) {
        assert_eq!(grads.len(), self.params.len(), "one gradient per parameter");
        self.steps += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        let correction1 = 1.0 - beta1.powi(self.steps as i32);
        let correction2 = 1.0 - beta2.powi(self.steps as i32);
        tch::no_grad(|| {
            for (((_, p), (m, v)), g) in self
                .params
                .iter_mut()
                .zip(self.first.iter_mut().zip(self.second.iter_mut()))
                .zip(grads)
            {
                let _ = m.g_mul_scalar_(beta1).g_add_(&(g * (1.0 - beta1)));
                let _ = v.g_mul_scalar_(beta2).g_add_(&(g.square() * (1.0 - beta2)));
                let denom = (&*v / correction2).sqrt() + eps;
                let update = (&*m / correction1) / denom * learning_rate;
                let _ = p.g_sub_(&update);
            }
        });
    }

    pub fn minimize(&mut self, loss: &Tensor, keep_graph: bool) {
        let grads = self.gradients(loss, keep_graph);
        self.step(&grads);
    }

    /// Moment estimates and the step count, keyed `m.<param>`, `v.<param>` and `steps`.
    pub fn state(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (((name, _), m), v) in self.params.iter().zip(&self.first).zip(&self.second) {
            out.insert(format!("m.{name}"), m.shallow_clone());
            out.insert(format!("v.{name}"), v.shallow_clone());
        }
        out.insert(
            "steps".to_string(),
            Tensor::from_slice(&[self.steps as f32]).to_kind(Kind::Float),
        );
        out
    }

    pub fn load_state(&mut self, state: &BTreeMap<String, Tensor>) -> Result<()> {
        let missing = |key: &str| Error::Shape(format!("optimizer state lacks {key}"));
        tch::no_grad(|| -> Result<()> {
            for (((name, _), m), v) in self
                .params
                .iter()
                .zip(self.first.iter_mut())
                .zip(self.second.iter_mut())
            {
                let key_m = format!("m.{name}");
                let key_v = format!("v.{name}");
                m.copy_(state.get(&key_m).ok_or_else(|| missing(&key_m))?);
                v.copy_(state.get(&key_v).ok_or_else(|| missing(&key_v))?);
            }
            Ok(())
        })?;
        let steps = state.get("steps").ok_or_else(|| missing("steps"))?;
        self.steps = steps.double_value(&[0]) as i64;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let p = Tensor::from_slice(&[1.0f32, -2.0]).set_requires_grad(true);
        let mut opt = Adam::new(vec![("p".into(), p.shallow_clone())], AdamConfig::default());
        let loss = (&p * Tensor::from_slice(&[3.0f32, -0.5])).sum(Kind::Float);
        opt.minimize(&loss, false);
        let after = Vec::<f32>::try_from(&p.detach()).unwrap();
        assert!((after[0] - (1.0 - 2e-4)).abs() < 1e-6);
        assert!((after[1] - (-2.0 + 2e-4)).abs() < 1e-6);
    }

    #[test]
    fn zero_learning_rate_is_bitwise_inert() {
        let p = Tensor::from_slice(&[0.123f32, -4.5, 7.25]).set_requires_grad(true);
        let before = Vec::<f32>::try_from(&p.detach()).unwrap();
        let cfg = AdamConfig {
            learning_rate: 0.0,
            ..AdamConfig::default()
        };
        let mut opt = Adam::new(vec![("p".into(), p.shallow_clone())], cfg);
        for _ in 0..3 {
            let loss = p.square().sum(Kind::Float);
            opt.minimize(&loss, false);
        }
        let after = Vec::<f32>::try_from(&p.detach()).unwrap();
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&before), bits(&after));
    }
}
