//! The two-phase alternating training loop.
//!
//! Each mini-batch runs an autoencoder phase followed by a prior-improvement phase.
//! Within a phase the losses are computed once from a single forward pass; gradients
//! for every updated group are taken from that graph and then applied in order.
//! Networks that a phase does not update run with batch statistics but without
//! touching their running estimates, so their state is bitwise unchanged.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use tch::Tensor;

use crate::checkpoint::Checkpoint;
use crate::config::{Conditioning, TrainingConfig};
use crate::data::{self, Batch, DatasetHandle};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::networks::{D_HEAD, Q_HEAD};
use crate::networks::Mode;
use crate::objectives::{
    code_adversarial_loss, generator_loss, image_adversarial_loss, mi_category_loss,
    perceptual_loss, pixel_mse_loss, scalar,
};
use crate::optim::Adam;
use crate::rng;
use crate::sampling::{draw_prior, LabelChoice};

pub const METRICS_FILE: &str = "metrics.csv";
pub const FAILURE_FILE: &str = "failure.txt";

/// Losses recorded for one mini-batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub l_rec: f64,
    pub l_code_gan: f64,
    pub l_image_gan: f64,
    /// Absent in unconditional mode.
    pub l_mi: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AaeMetrics {
    pub l_rec: f64,
    pub l_code_gan: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorMetrics {
    pub l_image_gan: f64,
    pub l_mi: Option<f64>,
}

/// Named optimizer groups. The image discriminator is split into its shared trunk
/// plus real/fake head (`d_img`) and the classification head (`q`).
pub const GROUPS: [&str; 6] = ["enc", "dec", "cg", "d_img", "q", "d_code"];

pub struct Trainer {
    pub model: Model,
    enc: Adam,
    dec: Adam,
    cg: Option<Adam>,
    d_img: Adam,
    q: Option<Adam>,
    d_code: Adam,
    noise: ChaCha8Rng,
    step: usize,
}

fn is_q_head(name: &str) -> bool {
    name.starts_with(Q_HEAD)
}

fn is_d_head(name: &str) -> bool {
    name.starts_with(D_HEAD)
}

impl Trainer {
    pub fn new(config: &TrainingConfig) -> Result<Self> {
        Self::from_model(Model::new(config)?)
    }

    pub fn from_model(model: Model) -> Result<Self> {
        let opt = model.config.optimizer;
        let all = |m: &BTreeMap<String, Tensor>| -> Vec<(String, Tensor)> {
            m.iter().map(|(k, v)| (k.clone(), v.shallow_clone())).collect()
        };
        let conditional = model.config.mode.is_conditional();
        let trainer = Self {
            enc: Adam::new(all(&model.encoder.parameters()), opt),
            dec: Adam::new(all(&model.decoder.parameters()), opt),
            cg: model
                .code_generator
                .as_ref()
                .map(|cg| Adam::new(all(&cg.parameters()), opt)),
            // Q shares the discriminator trunk, so both groups hold the trunk.
            d_img: Adam::new(model.image_discriminator.parameters_where(|n| !is_q_head(n)), opt),
            q: conditional.then(|| Adam::new(model.image_discriminator.parameters_where(|n| !is_d_head(n)), opt)),
            d_code: Adam::new(all(&model.code_discriminator.parameters()), opt),
            noise: rng::stream(model.config.seed, rng::Stream::Noise),
            step: 0,
            model,
        };
        Ok(trainer)
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.model.config
    }

    /// Number of completed mini-batches.
    pub fn step(&self) -> usize {
        self.step
    }

    fn optimizers(&self) -> Vec<(&'static str, &Adam)> {
        let mut out = vec![("enc", &self.enc), ("dec", &self.dec)];
        if let Some(cg) = &self.cg {
            out.push(("cg", cg));
        }
        out.push(("d_img", &self.d_img));
        if let Some(q) = &self.q {
            out.push(("q", q));
        }
        out.push(("d_code", &self.d_code));
        out
    }

    /// Model variables plus optimizer state under `opt.<group>.`.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ckpt = self.model.to_checkpoint(self.step as u64);
        for (group, adam) in self.optimizers() {
            for (k, v) in adam.state() {
                ckpt.insert(format!("opt.{group}.{k}"), &v);
            }
        }
        ckpt
    }

    /// One autoencoder-phase update on `batch`.
    pub fn aae_phase_step(&mut self, batch: &Batch) -> Result<AaeMetrics> {
        let config = self.model.config.clone();
        let n = batch.images.size()[0] as usize;
        let k = config.num_classes as usize;
        let supervised = config.mode == Conditioning::Supervised;
        let true_labels = if supervised {
            Some(batch.labels.as_ref().ok_or_else(|| {
                Error::Data("supervised training needs a labelled dataset".into())
            })?)
        } else {
            None
        };

        self.model.set_mode(Mode::Fixed);
        self.model.encoder.set_mode(Mode::Train);
        self.model.decoder.set_mode(Mode::Train);
        self.model.code_discriminator.set_mode(Mode::Train);

        // Supervised prior codes are drawn for the batch's own labels, which the code
        // discriminator then sees on both sides.
        let choice = match true_labels {
            Some(l) => LabelChoice::Given(l.clone()),
            None => LabelChoice::Random,
        };
        let prior = tch::no_grad(|| draw_prior(&self.model, n, &choice, Mode::Fixed, &mut self.noise))?;
        let cond = true_labels.map(|l| rng::one_hot(l, k));

        let codes = self.model.encoder.forward(&batch.images)?;
        let recon = self.model.decoder.forward(&codes)?;
        let d_prior = self.model.code_discriminator.forward(&prior.codes, cond.as_ref())?;
        let d_enc = self.model.code_discriminator.forward(&codes, cond.as_ref())?;
        let l_code = code_adversarial_loss(&d_prior, &d_enc)?;
        let l_rec = if config.ablation.perceptual_loss {
            let both = Tensor::cat(&[&batch.images, &recon], 0);
            let feats = self.model.image_discriminator.net().features(&both, Mode::Fixed)?;
            let n = n as i64;
            perceptual_loss(&feats.narrow(0, n, n), &feats.narrow(0, 0, n))?
        } else {
            pixel_mse_loss(&recon, &batch.images)?
        };

        let metrics = AaeMetrics {
            l_rec: scalar(&l_rec),
            l_code_gan: scalar(&l_code),
        };
        self.check_finite(&[("l_rec", metrics.l_rec), ("l_code_gan", metrics.l_code_gan)])?;

        let g_dcode = self.d_code.gradients(&(-&l_code), true);
        // The adversarial term does not reach the decoder, so one backward pass gives the
        // encoder's gradient of (L_gan + L_rec) and the decoder's gradient of L_rec.
        let enc_objective = generator_loss(&d_enc, config.ablation.nonsaturating_generator) + &l_rec;
        let mut g = joint_gradients(&enc_objective, &[&self.enc, &self.dec], false);
        let g_dec: Vec<Tensor> = g.pop().unwrap().iter().map(|t| t * config.lambda_rec).collect();
        let g_enc = g.pop().unwrap();
        self.check_gradients(&[("d_code", &g_dcode), ("enc", &g_enc), ("dec", &g_dec)])?;

        self.d_code.step(&g_dcode);
        self.enc.step(&g_enc);
        self.dec.step(&g_dec);
        Ok(metrics)
    }

    /// One prior-improvement-phase update on `batch`.
    pub fn prior_phase_step(&mut self, batch: &Batch) -> Result<PriorMetrics> {
        let config = self.model.config.clone();
        let n = batch.images.size()[0] as usize;
        let k = config.num_classes as usize;
        let conditional = config.mode.is_conditional();
        let train_dec = config.ablation.decoder_both_phases;
        let has_cg = self.cg.is_some();

        self.model.set_mode(Mode::Fixed);
        self.model.image_discriminator.set_mode(Mode::Train);
        if train_dec {
            self.model.decoder.set_mode(Mode::Train);
        }
        let cg_mode = if has_cg { Mode::Train } else { Mode::Fixed };
        if let Some(cg) = &mut self.model.code_generator {
            cg.set_mode(cg_mode);
        }

        let generator_grad = has_cg || train_dec;
        let (fake, labels) = if generator_grad {
            let prior = draw_prior(&self.model, n, &LabelChoice::Random, cg_mode, &mut self.noise)?;
            (self.model.decoder.forward(&prior.codes)?, prior.labels)
        } else {
            tch::no_grad(|| -> Result<_> {
                let prior = draw_prior(&self.model, n, &LabelChoice::Random, cg_mode, &mut self.noise)?;
                Ok((self.model.decoder.forward(&prior.codes)?, prior.labels))
            })?
        };

        let real_out = self.model.image_discriminator.forward(&batch.images)?;
        let fake_out = self.model.image_discriminator.forward(&fake)?;
        let l_image = image_adversarial_loss(&real_out.d, &fake_out.d)?;
        let l_mi = if conditional {
            let s = rng::one_hot(labels.as_ref().expect("conditional draw has labels"), k);
            Some(mi_category_loss(fake_out.q()?, &s)?)
        } else {
            None
        };

        let metrics = PriorMetrics {
            l_image_gan: scalar(&l_image),
            l_mi: l_mi.as_ref().map(scalar),
        };
        let mut values = vec![("l_image_gan", metrics.l_image_gan)];
        if let Some(v) = metrics.l_mi {
            values.push(("l_mi", v));
        }
        self.check_finite(&values)?;

        let g_dimg = self.d_img.gradients(&(-&l_image), true);
        let mut gen_objective = generator_loss(&fake_out.d, config.ablation.nonsaturating_generator);
        if let Some(mi) = &l_mi {
            gen_objective = gen_objective + mi;
        }
        let mut groups: Vec<&Adam> = Vec::new();
        if train_dec {
            groups.push(&self.dec);
        }
        if let Some(cg) = &self.cg {
            groups.push(cg);
        }
        let keep = l_mi.is_some();
        let mut g_gen = if groups.is_empty() {
            Vec::new()
        } else {
            joint_gradients(&gen_objective, &groups, keep)
        };
        let g_q = match (&self.q, &l_mi) {
            (Some(q), Some(mi)) => Some(q.gradients(mi, false)),
            _ => None,
        };
        let g_cg = if has_cg { g_gen.pop() } else { None };
        let g_dec = if train_dec { g_gen.pop() } else { None };

        let mut checks: Vec<(&str, &[Tensor])> = vec![("d_img", &g_dimg)];
        if let Some(g) = &g_dec {
            checks.push(("dec", g));
        }
        if let Some(g) = &g_cg {
            checks.push(("cg", g));
        }
        if let Some(g) = &g_q {
            checks.push(("q", g));
        }
        self.check_gradients(&checks)?;

        self.d_img.step(&g_dimg);
        if let Some(g) = g_dec {
            self.dec.step(&g);
        }
        if let (Some(cg), Some(g)) = (&mut self.cg, g_cg) {
            cg.step(&g);
        }
        if let (Some(q), Some(g)) = (&mut self.q, g_q) {
            q.step(&g);
        }
        Ok(metrics)
    }

    /// Both phases on one mini-batch.
    pub fn train_step(&mut self, batch: &Batch) -> Result<StepMetrics> {
        let aae = self.aae_phase_step(batch)?;
        let prior = self.prior_phase_step(batch)?;
        let metrics = StepMetrics {
            step: self.step,
            l_rec: aae.l_rec,
            l_code_gan: aae.l_code_gan,
            l_image_gan: prior.l_image_gan,
            l_mi: prior.l_mi,
        };
        self.step += 1;
        Ok(metrics)
    }

    fn check_finite(&self, values: &[(&str, f64)]) -> Result<()> {
        match values.iter().find(|(_, v)| !v.is_finite()) {
            None => Ok(()),
            Some((name, _)) => Err(self.non_finite(name, values)),
        }
    }

    fn check_gradients(&self, grads: &[(&str, &[Tensor])]) -> Result<()> {
        for (group, g) in grads {
            let finite = g.iter().all(|t| scalar(&t.isfinite().all()) != 0.0);
            if !finite {
                return Err(self.non_finite(&format!("gradient of {group}"), &[]));
            }
        }
        Ok(())
    }

    fn non_finite(&self, quantity: &str, losses: &[(&str, f64)]) -> Error {
        let mut dump = format!("step = {}\n", self.step);
        for (name, v) in losses {
            dump.push_str(&format!("{name} = {v}\n"));
        }
        for (group, adam) in self.optimizers() {
            let sq: f64 = adam.parameters().map(|p| scalar(&p.square().sum(tch::Kind::Double))).sum();
            dump.push_str(&format!("param_norm.{group} = {}\n", sq.sqrt()));
        }
        Error::NonFinite {
            step: self.step,
            quantity: quantity.to_string(),
            dump,
        }
    }
}

/// Gradients of `loss` for several optimizer groups from one backward pass.
fn joint_gradients(loss: &Tensor, groups: &[&Adam], keep_graph: bool) -> Vec<Vec<Tensor>> {
    let inputs: Vec<&Tensor> = groups.iter().flat_map(|g| g.parameters()).collect();
    let mut grads = Tensor::run_backward(&[loss], &inputs, keep_graph, false)
        .into_iter()
        .zip(&inputs)
        .map(|(g, p)| if g.defined() { g } else { p.zeros_like() });
    groups
        .iter()
        .map(|g| grads.by_ref().take(g.parameters().count()).collect())
        .collect()
}

/// Result of a complete run.
pub struct TrainingOutcome {
    pub trainer: Trainer,
    pub metrics: Vec<StepMetrics>,
}

impl TrainingOutcome {
    pub fn checkpoint(&self) -> Checkpoint {
        self.trainer.checkpoint()
    }
}

/// Check that `dataset` can feed a model built from `config`.
pub fn check_dataset(config: &TrainingConfig, dataset: &DatasetHandle) -> Result<()> {
    if dataset.channels() != config.channels {
        return Err(Error::Data(format!(
            "dataset {} has {} channels, the model expects {}",
            dataset.name,
            dataset.channels(),
            config.channels
        )));
    }
    if config.mode == Conditioning::Supervised {
        match (&dataset.labels, dataset.num_classes) {
            (Some(_), Some(k)) if k as i64 == config.num_classes => {}
            (Some(_), Some(k)) => {
                return Err(Error::Data(format!(
                    "dataset {} has {k} classes, the model expects {}",
                    dataset.name, config.num_classes
                )))
            }
            _ => {
                return Err(Error::Data(format!(
                    "supervised mode needs labels, dataset {} has none",
                    dataset.name
                )))
            }
        }
    }
    if dataset.len() < config.batch_size {
        return Err(Error::Data(format!(
            "batch_size {} exceeds dataset size {}",
            config.batch_size,
            dataset.len()
        )));
    }
    Ok(())
}

pub fn metrics_header() -> [&'static str; 5] {
    ["step", "l_rec", "l_code_gan", "l_image_gan", "l_mi"]
}

fn metrics_record(m: &StepMetrics) -> [String; 5] {
    [
        m.step.to_string(),
        m.l_rec.to_string(),
        m.l_code_gan.to_string(),
        m.l_image_gan.to_string(),
        m.l_mi.map_or_else(String::new, |v| v.to_string()),
    ]
}

/// Parse a metrics log written by [`run_training`].
pub fn read_metrics(path: &Path) -> Result<Vec<StepMetrics>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for record in r.records() {
        let record = record?;
        let num = |i: usize| -> Result<f64> {
            record[i]
                .parse()
                .map_err(|_| Error::Data(format!("bad metrics value {:?}", &record[i])))
        };
        out.push(StepMetrics {
            step: num(0)? as usize,
            l_rec: num(1)?,
            l_code_gan: num(2)?,
            l_image_gan: num(3)?,
            l_mi: if record[4].is_empty() { None } else { Some(num(4)?) },
        });
    }
    Ok(out)
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("ckpt_epoch_{epoch}")
}

/// Train for `config.epochs` epochs. With `out_dir`, writes the metrics log and one
/// checkpoint per epoch (`ckpt_epoch_1`, ...). On a non-finite loss the run stops,
/// a diagnostic file is written and earlier checkpoints are left in place.
pub fn run_training(
    config: &TrainingConfig,
    dataset: &DatasetHandle,
    out_dir: Option<&Path>,
) -> Result<TrainingOutcome> {
    config.validate()?;
    check_dataset(config, dataset)?;
    let mut trainer = Trainer::new(config)?;
    let mut log = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(METRICS_FILE);
            let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut w = csv::Writer::from_writer(file);
            w.write_record(metrics_header())?;
            w.flush().map_err(|e| Error::io(&path, e))?;
            Some((w, path))
        }
        None => None,
    };
    let mut metrics = Vec::new();
    for epoch in 0..config.epochs {
        let mut sums = [0f64; 3];
        let mut count = 0usize;
        for batch in data::batches(dataset, config.batch_size, config.seed, epoch)? {
            let m = match trainer.train_step(&batch) {
                Ok(m) => m,
                Err(e) => {
                    if let (Some(dir), Error::NonFinite { dump, quantity, .. }) = (out_dir, &e) {
                        let text = format!("non-finite {quantity}\n{dump}");
                        crate::checkpoint::write_atomic(&dir.join(FAILURE_FILE), text.as_bytes())?;
                    }
                    if let Some((w, path)) = &mut log {
                        w.flush().map_err(|e| Error::io(&*path, e))?;
                    }
                    return Err(e);
                }
            };
            if let Some((w, _)) = &mut log {
                w.write_record(metrics_record(&m))?;
            }
            sums[0] += m.l_rec;
            sums[1] += m.l_code_gan;
            sums[2] += m.l_image_gan;
            count += 1;
            metrics.push(m);
        }
        let c = count.max(1) as f64;
        log::info!(
            "epoch {}/{}: l_rec {:.4} l_code_gan {:.4} l_image_gan {:.4}",
            epoch + 1,
            config.epochs,
            sums[0] / c,
            sums[1] / c,
            sums[2] / c
        );
        if let (Some(dir), Some((w, path))) = (out_dir, &mut log) {
            w.flush().map_err(|e| Error::io(&*path, e))?;
            trainer.checkpoint().save(&dir.join(checkpoint_name(epoch + 1)))?;
        }
    }
    if let Some((w, path)) = &mut log {
        w.flush().map_err(|e| Error::io(&*path, e))?;
    }
    Ok(TrainingOutcome { trainer, metrics })
}
