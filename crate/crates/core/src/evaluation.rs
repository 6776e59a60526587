//! Inception-Score-style scoring against a pluggable classifier, a small classifier
//! trainer that stands in for the Inception network, and label-conditional accuracy.
//!
//! Scores are only comparable between runs scored by the same classifier.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use tch::{Kind, Tensor};

use crate::checkpoint::Checkpoint;
use crate::data::{self, DatasetHandle};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::networks::{build_image_discriminator, ImageDiscriminator, Mode, NetworkHandle};
use crate::objectives::{mi_category_loss, scalar};
use crate::optim::{Adam, AdamConfig};
use crate::rng;
use crate::sampling::{draw_prior, generate_images, LabelChoice};

pub const DEFAULT_SPLITS: usize = 10;
pub const CLASSIFIER_KIND: &str = "classifier";
const EVAL_BATCH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreResult {
    pub mean: f64,
    /// Population standard deviation over splits.
    pub std: f64,
    pub splits: usize,
}

/// `exp(mean_i KL(p(y|x_i) || p(y)))` per split, averaged over splits. Rows beyond
/// `splits * floor(N / splits)` are dropped. Logs are natural.
pub fn inception_score(probs: &[Vec<f64>], splits: usize) -> Result<ScoreResult> {
    let k = probs.first().map_or(0, Vec::len);
    if k < 2 {
        return Err(Error::Shape(format!("inception score needs at least 2 classes, got {k}")));
    }
    if let Some(row) = probs.iter().find(|r| r.len() != k) {
        return Err(Error::Shape(format!("ragged probability rows: {} vs {k}", row.len())));
    }
    if splits == 0 || probs.len() < splits {
        return Err(Error::Config(format!(
            "{} rows cannot be cut into {splits} splits",
            probs.len()
        )));
    }
    let per = probs.len() / splits;
    let scores: Vec<f64> = probs
        .chunks_exact(per)
        .take(splits)
        .map(|part| {
            let mut marginal = vec![0f64; k];
            for row in part {
                for (m, p) in marginal.iter_mut().zip(row) {
                    *m += p / per as f64;
                }
            }
            let kl: f64 = part
                .iter()
                .map(|row| {
                    row.iter()
                        .zip(&marginal)
                        .filter(|(p, _)| **p > 0.0)
                        .map(|(p, m)| p * (p.ln() - m.ln()))
                        .sum::<f64>()
                })
                .sum::<f64>()
                / per as f64;
            kl.exp()
        })
        .collect();
    let mean = scores.iter().sum::<f64>() / splits as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / splits as f64;
    Ok(ScoreResult {
        mean,
        std: var.sqrt(),
        splits,
    })
}

/// Maps images to class probabilities.
pub trait Classifier {
    fn num_classes(&self) -> usize;
    fn channels(&self) -> i64;
    /// `N x K` rows summing to one.
    fn probabilities(&self, images: &Tensor) -> Result<Tensor>;

    fn predict(&self, images: &Tensor) -> Result<Vec<usize>> {
        let p = self.probabilities(images)?.argmax(1, false);
        Ok(Vec::<i64>::try_from(&p)
            .expect("int tensor")
            .into_iter()
            .map(|c| c as usize)
            .collect())
    }
}

/// Produces images for a requested class.
pub trait ConditionalGenerator {
    fn num_classes(&self) -> usize;
    fn generate(&self, label: usize, n: usize, seed: u64) -> Result<Tensor>;
}

impl ConditionalGenerator for Model {
    fn num_classes(&self) -> usize {
        if self.config.mode.is_conditional() {
            self.config.num_classes as usize
        } else {
            0
        }
    }

    fn generate(&self, label: usize, n: usize, seed: u64) -> Result<Tensor> {
        let mut g = rng::stream(seed ^ (label as u64).wrapping_mul(0x2545_F491_4F6C_DD1D), rng::Stream::Sample);
        let draw = tch::no_grad(|| draw_prior(self, n, &LabelChoice::Fixed(label), Mode::Eval, &mut g))?;
        generate_images(self, &draw.codes)
    }
}

/// `n` unconditional (or randomly labelled) samples, decoded in evaluation mode.
pub fn sample_images(model: &Model, n: usize, seed: u64) -> Result<Tensor> {
    let mut g = rng::stream(seed, rng::Stream::Sample);
    let mut parts = Vec::new();
    let mut left = n;
    while left > 0 {
        let m = left.min(EVAL_BATCH);
        let draw = tch::no_grad(|| draw_prior(model, m, &LabelChoice::Random, Mode::Eval, &mut g))?;
        parts.push(generate_images(model, &draw.codes)?);
        left -= m;
    }
    Ok(Tensor::cat(&parts, 0))
}

/// Probability rows for `images`, evaluated in batches.
pub fn probability_rows(classifier: &dyn Classifier, images: &Tensor) -> Result<Vec<Vec<f64>>> {
    let n = images.size()[0];
    let k = classifier.num_classes();
    let mut out = Vec::with_capacity(n as usize);
    let mut start = 0;
    while start < n {
        let len = (n - start).min(EVAL_BATCH as i64);
        let p = classifier.probabilities(&images.narrow(0, start, len))?;
        let flat = Vec::<f64>::try_from(&p.to_kind(Kind::Double).contiguous().flatten(0, -1))
            .expect("double tensor");
        out.extend(flat.chunks_exact(k).map(<[f64]>::to_vec));
        start += len;
    }
    Ok(out)
}

/// Score `images` with `classifier`.
pub fn classifier_score(classifier: &dyn Classifier, images: &Tensor, splits: usize) -> Result<ScoreResult> {
    inception_score(&probability_rows(classifier, images)?, splits)
}

/// Fraction of generated images classified as the class they were generated for,
/// with `per_class` images per class.
pub fn conditional_accuracy(
    generator: &dyn ConditionalGenerator,
    classifier: &dyn Classifier,
    per_class: usize,
    seed: u64,
) -> Result<f64> {
    let k = generator.num_classes();
    if k == 0 {
        return Err(Error::Config("conditional accuracy needs a conditional model".into()));
    }
    if k != classifier.num_classes() {
        return Err(Error::Config(format!(
            "model has {k} classes, classifier has {}",
            classifier.num_classes()
        )));
    }
    if per_class == 0 {
        return Err(Error::Config("per_class must be at least 1".into()));
    }
    let mut hits = 0usize;
    for label in 0..k {
        let images = generator.generate(label, per_class, seed)?;
        hits += classifier.predict(&images)?.iter().filter(|&&c| c == label).count();
    }
    Ok(hits as f64 / (k * per_class) as f64)
}

/// Settings for [`train_eval_classifier`].
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub width: i64,
    pub optimizer: AdamConfig,
    /// Share of the data held out for the accuracy check.
    pub held_out: f64,
    pub accuracy_floor: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            batch_size: 32,
            width: 32,
            optimizer: AdamConfig {
                learning_rate: 1e-3,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            held_out: 0.2,
            accuracy_floor: 0.95,
            seed: 0,
        }
    }
}

/// The image discriminator's trunk and classification head used as a plain classifier.
pub struct TrainedClassifier {
    pub network: NetworkHandle<ImageDiscriminator>,
    pub width: i64,
    /// Held-out accuracy measured after training.
    pub accuracy: f64,
}

impl Classifier for TrainedClassifier {
    fn num_classes(&self) -> usize {
        self.network.net().num_classes().unwrap_or(0) as usize
    }

    fn channels(&self) -> i64 {
        self.network.net().channels()
    }

    fn probabilities(&self, images: &Tensor) -> Result<Tensor> {
        tch::no_grad(|| {
            let out = self.network.net().forward(images, Mode::Eval)?;
            Ok(out.q()?.shallow_clone())
        })
    }
}

impl TrainedClassifier {
    pub fn accuracy_on(&self, data: &DatasetHandle) -> Result<f64> {
        let labels = data
            .labels
            .as_ref()
            .ok_or_else(|| Error::Data(format!("dataset {} has no labels", data.name)))?;
        let mut hits = 0usize;
        for start in (0..data.len()).step_by(EVAL_BATCH) {
            let idx: Vec<usize> = (start..(start + EVAL_BATCH).min(data.len())).collect();
            let predicted = self.predict(&data.select(&idx).images)?;
            hits += predicted.iter().zip(&labels[start..]).filter(|(p, l)| p == l).count();
        }
        Ok(hits as f64 / data.len().max(1) as f64)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let metadata = format!(
            "channels = {}\nnum_classes = {}\nwidth = {}\naccuracy = {}\n",
            self.channels(),
            self.num_classes(),
            self.width,
            self.accuracy
        );
        let mut ckpt = Checkpoint::new(CLASSIFIER_KIND, metadata, 0, 0);
        for (name, t) in self.network.variables() {
            ckpt.insert(format!("clf.{name}"), &t);
        }
        ckpt
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.kind != CLASSIFIER_KIND {
            return Err(Error::Config(format!(
                "expected a {CLASSIFIER_KIND} checkpoint, found {:?}",
                ckpt.kind
            )));
        }
        let meta = crate::config::parse_entries(&ckpt.metadata)?;
        let get = |key: &str| -> Result<f64> {
            meta.get(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Config(format!("classifier metadata lacks {key}")))
        };
        let (channels, k, width) = (get("channels")? as i64, get("num_classes")? as i64, get("width")? as i64);
        let mut g = rng::stream(0, rng::Stream::Init);
        let mut network = build_image_discriminator(channels, k, true, width, &mut g)?;
        network.load_variables(&ckpt.group("clf"))?;
        network.set_mode(Mode::Eval);
        Ok(Self {
            network,
            width,
            accuracy: get("accuracy")?,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Train a classifier on a seeded split of `dataset` and check its held-out accuracy.
/// Fails with [`Error::AccuracyFloor`] below `config.accuracy_floor`.
pub fn train_eval_classifier(dataset: &DatasetHandle, config: &ClassifierConfig) -> Result<TrainedClassifier> {
    let k = match (&dataset.labels, dataset.num_classes) {
        (Some(_), Some(k)) if k >= 2 => k,
        _ => {
            return Err(Error::Data(format!(
                "classifier training needs a labelled dataset with at least 2 classes, {} has none",
                dataset.name
            )))
        }
    };
    let (train, held) = dataset.split(config.held_out, config.seed);
    let mut g = rng::stream(config.seed, rng::Stream::Init);
    let mut network = build_image_discriminator(dataset.channels(), k as i64, true, config.width, &mut g)?;
    let mut adam = Adam::new(network.parameters().into_iter().collect(), config.optimizer);
    for epoch in 0..config.epochs {
        for batch in data::batches(&train, config.batch_size, config.seed, epoch)? {
            let q = network.net().forward(&batch.images, Mode::Train)?;
            let target = rng::one_hot(batch.labels.as_ref().expect("labelled"), k);
            let loss = mi_category_loss(q.q()?, &target)?;
            if !scalar(&loss).is_finite() {
                return Err(Error::NonFinite {
                    step: adam.steps() as usize,
                    quantity: "classifier loss".into(),
                    dump: String::new(),
                });
            }
            adam.minimize(&loss, false);
        }
    }
    network.set_mode(Mode::Eval);
    let mut clf = TrainedClassifier {
        network,
        width: config.width,
        accuracy: 0.0,
    };
    let measured_on = if held.is_empty() { &train } else { &held };
    clf.accuracy = clf.accuracy_on(measured_on)?;
    log::info!("classifier held-out accuracy {:.4}", clf.accuracy);
    if clf.accuracy < config.accuracy_floor {
        return Err(Error::AccuracyFloor {
            achieved: clf.accuracy,
            required: config.accuracy_floor,
        });
    }
    Ok(clf)
}

/// Output of the `evaluate` command.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub score: ScoreResult,
    pub n: usize,
    pub cond_accuracy: Option<f64>,
}

impl ScoreReport {
    pub fn to_text(&self) -> String {
        let mut fields = BTreeMap::new();
        fields.insert("is_mean", self.score.mean.to_string());
        fields.insert("is_std", self.score.std.to_string());
        fields.insert("splits", self.score.splits.to_string());
        fields.insert("n", self.n.to_string());
        if let Some(a) = self.cond_accuracy {
            fields.insert("cond_accuracy", a.to_string());
        }
        let mut out = String::new();
        for key in ["is_mean", "is_std", "splits", "n", "cond_accuracy"] {
            if let Some(v) = fields.get(key) {
                let _ = writeln!(out, "{key} = {v}");
            }
        }
        out
    }
}

/// Score `n` samples from `model`; conditional models also get per-class accuracy
/// with `n / K` images per class.
pub fn evaluate(
    model: &Model,
    classifier: &dyn Classifier,
    n: usize,
    splits: usize,
    seed: u64,
) -> Result<ScoreReport> {
    if classifier.channels() != model.config.channels {
        return Err(Error::Config(format!(
            "model produces {} channels, classifier takes {}",
            model.config.channels,
            classifier.channels()
        )));
    }
    let conditional = model.config.mode.is_conditional();
    if conditional && model.config.num_classes as usize != classifier.num_classes() {
        return Err(Error::Config(format!(
            "model has {} classes, classifier has {}",
            model.config.num_classes,
            classifier.num_classes()
        )));
    }
    let images = sample_images(model, n, seed)?;
    let score = classifier_score(classifier, &images, splits)?;
    let cond_accuracy = if conditional {
        let per_class = (n / model.config.num_classes as usize).max(1);
        Some(conditional_accuracy(model, classifier, per_class, seed)?)
    } else {
        None
    };
    Ok(ScoreReport {
        score,
        n,
        cond_accuracy,
    })
}
