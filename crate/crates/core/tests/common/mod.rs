#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use priorforge::config::{Conditioning, TrainingConfig, DATA_ENV};
use priorforge::data::synthetic::synthetic_dataset;
use priorforge::data::{Batch, DatasetHandle};
use priorforge::model::Model;
use priorforge::networks::Q_HEAD;
use priorforge::objectives::{
    code_adversarial_loss, generator_loss, image_adversarial_loss, mi_category_loss,
    perceptual_loss, pixel_mse_loss, scalar,
};
use priorforge::training::Trainer;
use tch::{Device, Kind, Tensor};

/// A small configuration that trains quickly on CPU.
pub fn tiny_config(mode: Conditioning) -> TrainingConfig {
    let mut c = TrainingConfig::new(mode);
    c.width = 4;
    c.code_dim = 8;
    c.noise_dim = 8;
    if mode.is_conditional() {
        c.num_classes = 4;
    }
    c.batch_size = 8;
    c.epochs = 1;
    c
}

pub fn synthetic(n: usize, k: usize) -> DatasetHandle {
    synthetic_dataset(n, k, 0).unwrap()
}

pub fn first_batch(data: &DatasetHandle, n: usize) -> Batch {
    data.select(&(0..n).collect::<Vec<_>>())
}

/// `$PRIORFORGE_DATA/mnist` if set, else the checkout's `data/mnist`.
pub fn mnist_dir() -> PathBuf {
    match std::env::var_os(DATA_ENV) {
        Some(root) => PathBuf::from(root).join("mnist"),
        None => PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"),
    }
}

fn dbl(v: &[f64], dims: &[i64]) -> Tensor {
    Tensor::from_slice(v).reshape(dims).to_kind(Kind::Double)
}

/// Deterministic pseudo-random values in (-1, 1).
pub fn values(n: usize, salt: u64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let x = ((i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ salt.wrapping_mul(0xBF58_476D_1CE4_E5B9)) >> 11;
            (x as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect()
}

/// A toy differentiable model with `n_params` parameters mapped to a scalar loss.
pub struct GradientCase {
    pub name: &'static str,
    pub n_params: usize,
    /// Loss at `theta`. The flag says whether the loss is being differentiated by
    /// autograd (true) or evaluated for finite differences (false).
    pub loss: Box<dyn Fn(&Tensor, bool) -> Tensor>,
}

/// Every training objective composed with a tiny parameterized map.
pub fn gradient_cases() -> Vec<GradientCase> {
    let xr = dbl(&values(12, 1), &[3, 4]);
    let xf = dbl(&values(12, 2), &[3, 4]);
    let s = dbl(&[1., 0., 0., 0., 1., 0., 0., 0., 1.], &[3, 3]);
    let theta0 = dbl(&values(20, 3), &[20]) * 0.5;

    // A linear unit with sigmoid output: 4 weights + 1 bias.
    let prob = |x: &Tensor, th: &Tensor| -> Tensor {
        let w = th.narrow(0, 0, 4).reshape([4, 1]);
        (x.matmul(&w) + th.narrow(0, 4, 1)).sigmoid()
    };
    // A 4 -> 3 tanh feature map: 12 weights.
    let feat = |x: &Tensor, th: &Tensor| -> Tensor { x.matmul(&th.narrow(0, 0, 12).reshape([4, 3])).tanh() };

    let mut cases: Vec<GradientCase> = Vec::new();
    {
        let (xr, xf) = (xr.shallow_clone(), xf.shallow_clone());
        cases.push(GradientCase {
            name: "image adversarial",
            n_params: 5,
            loss: Box::new(move |th, _| image_adversarial_loss(&prob(&xr, th), &prob(&xf, th)).unwrap()),
        });
    }
    {
        let (xr, xf) = (xr.shallow_clone(), xf.shallow_clone());
        cases.push(GradientCase {
            name: "code adversarial",
            n_params: 5,
            loss: Box::new(move |th, _| code_adversarial_loss(&prob(&xr, th), &prob(&xf, th)).unwrap()),
        });
    }
    for nonsat in [false, true] {
        let xf = xf.shallow_clone();
        cases.push(GradientCase {
            name: if nonsat { "generator (non-saturating)" } else { "generator (saturating)" },
            n_params: 5,
            loss: Box::new(move |th, _| generator_loss(&prob(&xf, th), nonsat)),
        });
    }
    {
        // The original's features are detached, so finite differences must hold them
        // at their value for the unperturbed parameters.
        let (xr, xf) = (xr.shallow_clone(), xf.shallow_clone());
        let frozen = feat(&xr, &theta0.narrow(0, 0, 12));
        cases.push(GradientCase {
            name: "perceptual reconstruction",
            n_params: 12,
            loss: Box::new(move |th, autograd| {
                let orig = if autograd { feat(&xr, th) } else { frozen.shallow_clone() };
                perceptual_loss(&feat(&xf, th), &orig).unwrap()
            }),
        });
    }
    {
        let (xr, xf) = (xr.shallow_clone(), xf.shallow_clone());
        cases.push(GradientCase {
            name: "pixel mse",
            n_params: 12,
            loss: Box::new(move |th, _| pixel_mse_loss(&feat(&xf, th), &xr.narrow(1, 0, 3)).unwrap()),
        });
    }
    {
        let xf = xf.shallow_clone();
        cases.push(GradientCase {
            name: "mi category",
            n_params: 15,
            loss: Box::new(move |th, _| {
                let logits = xf.matmul(&th.narrow(0, 0, 12).reshape([4, 3])) + th.narrow(0, 12, 3);
                mi_category_loss(&logits.softmax(-1, Kind::Double), &s).unwrap()
            }),
        });
    }
    cases
}

pub fn theta0(n: usize) -> Tensor {
    dbl(&values(20, 3), &[20]).narrow(0, 0, n as i64) * 0.5
}

/// Largest relative error between autograd and central differences with step `h`.
pub fn gradient_error(case: &GradientCase, h: f64) -> f64 {
    let theta = theta0(case.n_params).set_requires_grad(true);
    let loss = (case.loss)(&theta, true);
    let auto = Tensor::run_backward(&[&loss], &[&theta], false, false).remove(0);
    let auto = Vec::<f64>::try_from(&auto).unwrap();
    let base = theta.detach();
    let mut worst = 0f64;
    for i in 0..case.n_params {
        let mut e = vec![0f64; case.n_params];
        e[i] = h;
        let step = Tensor::from_slice(&e).to_kind(Kind::Double).to_device(Device::Cpu);
        let plus = scalar(&tch::no_grad(|| (case.loss)(&(&base + &step), false)));
        let minus = scalar(&tch::no_grad(|| (case.loss)(&(&base - &step), false)));
        let fd = (plus - minus) / (2.0 * h);
        let scale = auto[i].abs().max(fd.abs());
        let rel = if scale == 0.0 { 0.0 } else { (auto[i] - fd).abs() / scale };
        worst = worst.max(rel);
    }
    worst
}

/// Copies of every variable, keyed `<group>.<name>` where the image discriminator's
/// classification head is its own group `q`.
pub fn snapshot(model: &Model) -> BTreeMap<String, Tensor> {
    let mut out = BTreeMap::new();
    let mut add = |group: &str, vars: BTreeMap<String, Tensor>| {
        for (k, v) in vars {
            let g = if group == "d_img" && k.starts_with(Q_HEAD) { "q" } else { group };
            out.insert(format!("{g}.{k}"), v.copy());
        }
    };
    add("enc", model.encoder.variables());
    add("dec", model.decoder.variables());
    if let Some(cg) = &model.code_generator {
        add("cg", cg.variables());
    }
    add("d_img", model.image_discriminator.variables());
    add("d_code", model.code_discriminator.variables());
    out
}

pub fn trainable(model: &Model) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut add = |group: &str, names: Vec<String>| {
        for k in names {
            let g = if group == "d_img" && k.starts_with(Q_HEAD) { "q" } else { group };
            out.insert(format!("{g}.{k}"));
        }
    };
    add("enc", model.encoder.parameters().into_keys().collect());
    add("dec", model.decoder.parameters().into_keys().collect());
    if let Some(cg) = &model.code_generator {
        add("cg", cg.parameters().into_keys().collect());
    }
    add("d_img", model.image_discriminator.parameters().into_keys().collect());
    add("d_code", model.code_discriminator.parameters().into_keys().collect());
    out
}

pub fn changed(before: &BTreeMap<String, Tensor>, after: &BTreeMap<String, Tensor>) -> BTreeSet<String> {
    before
        .iter()
        .filter(|(k, v)| !v.equal(&after[*k]))
        .map(|(k, _)| k.clone())
        .collect()
}

fn group(name: &str) -> &str {
    name.split('.').next().unwrap()
}

/// Every trainable tensor of `groups` changes and nothing outside `groups` does.
fn check_updates(model: &Model, diff: &BTreeSet<String>, groups: &[&str], what: &str) -> Result<(), String> {
    let outside: Vec<&String> = diff.iter().filter(|k| !groups.contains(&group(k))).collect();
    if !outside.is_empty() {
        return Err(format!("{what}: unexpected changes {outside:?}"));
    }
    let missing: Vec<String> = trainable(model)
        .into_iter()
        .filter(|k| groups.contains(&group(k)) && !diff.contains(k))
        .collect();
    if !missing.is_empty() {
        return Err(format!("{what}: parameters not updated {missing:?}"));
    }
    Ok(())
}

/// Run `steps` training steps on synthetic batches of 8, checking after each phase that
/// exactly the `aae` and `prior` groups changed.
pub fn phase_isolation(config: &TrainingConfig, aae: &[&str], prior: &[&str], steps: usize) -> Result<(), String> {
    let data = synthetic(8 * steps.max(8), 4);
    let mut t = Trainer::new(config).map_err(|e| e.to_string())?;
    for step in 0..steps {
        let batch = data.select(&(step * 8..step * 8 + 8).collect::<Vec<_>>());
        let before = snapshot(&t.model);
        t.aae_phase_step(&batch).map_err(|e| e.to_string())?;
        let mid = snapshot(&t.model);
        check_updates(&t.model, &changed(&before, &mid), aae, &format!("step {step} autoencoder phase"))?;
        t.prior_phase_step(&batch).map_err(|e| e.to_string())?;
        let after = snapshot(&t.model);
        check_updates(&t.model, &changed(&mid, &after), prior, &format!("step {step} prior phase"))?;
    }
    Ok(())
}

