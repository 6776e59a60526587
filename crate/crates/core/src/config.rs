//! Training configuration and the flat `key = value` configuration file format.
//!
//! ```text
//! # comments start with '#'
//! mode = supervised
//! dataset = mnist
//! code_dim = 64
//! noise_dim = 54
//! ```
//!
//! Keys (defaults in parentheses):
//!
//! | key | meaning |
//! |-----|---------|
//! | `mode` | `unconditional`, `supervised` or `unsupervised` (required) |
//! | `dataset` | `mnist`, `cifar10`, `folder` or `synthetic` (required) |
//! | `data_path` | dataset location (`$PRIORFORGE_DATA/<dataset>`) |
//! | `dataset_limit` | keep only the first N samples, 0 keeps all (0) |
//! | `synthetic_size` | images generated for `dataset = synthetic` (1024) |
//! | `output_dir` | checkpoints and metrics (`runs`) |
//! | `channels` | image channels; replaced by the dataset's when training (1) |
//! | `code_dim` | latent code size (64) |
//! | `noise_dim` | Gaussian noise size fed to the code generator (64) |
//! | `num_classes` | categories in conditional modes (10); rejected in unconditional mode |
//! | `width` | base channel count of the convolutional networks (64) |
//! | `lambda_rec` | weight of the reconstruction loss in the decoder update (1.0) |
//! | `learning_rate` | Adam step size (0.0002) |
//! | `beta1`, `beta2` | Adam moment decay rates (0.5, 0.999) |
//! | `batch_size` | mini-batch size, at least 2 (64) |
//! | `epochs` | passes over the dataset (10) |
//! | `seed` | seed for initialization, batching and noise (0) |
//! | `learned_prior` | train a code generator instead of a fixed Gaussian prior (true) |
//! | `perceptual_loss` | reconstruct in discriminator feature space instead of pixels (true) |
//! | `decoder_both_phases` | also update the decoder in the prior-improvement phase (true) |
//! | `nonsaturating_generator` | descend `-log D` instead of `log(1 - D)` (false) |

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::networks::REFERENCE_WIDTH;
use crate::optim::AdamConfig;

/// Environment variable naming the default dataset root.
pub const DATA_ENV: &str = "PRIORFORGE_DATA";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Conditioning {
    Unconditional,
    /// Labels of the training images drive the code generator and code discriminator.
    Supervised,
    /// Categories are sampled; the code discriminator stays class agnostic.
    Unsupervised,
}

impl Conditioning {
    pub fn is_conditional(self) -> bool {
        self != Conditioning::Unconditional
    }
}

impl FromStr for Conditioning {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unconditional" => Ok(Self::Unconditional),
            "supervised" => Ok(Self::Supervised),
            "unsupervised" => Ok(Self::Unsupervised),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

impl fmt::Display for Conditioning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Unconditional => "unconditional",
            Self::Supervised => "supervised",
            Self::Unsupervised => "unsupervised",
        })
    }
}

/// Switches for the ablation study; all on is the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ablation {
    pub learned_prior: bool,
    pub perceptual_loss: bool,
    pub decoder_both_phases: bool,
    pub nonsaturating_generator: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            learned_prior: true,
            perceptual_loss: true,
            decoder_both_phases: true,
            nonsaturating_generator: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub mode: Conditioning,
    pub channels: i64,
    pub code_dim: i64,
    pub noise_dim: i64,
    /// Zero in unconditional mode.
    pub num_classes: i64,
    pub width: i64,
    pub lambda_rec: f64,
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub ablation: Ablation,
}

impl TrainingConfig {
    /// Defaults for `mode`; conditional modes get 10 classes.
    pub fn new(mode: Conditioning) -> Self {
        Self {
            mode,
            channels: 1,
            code_dim: 64,
            noise_dim: 64,
            num_classes: if mode.is_conditional() { 10 } else { 0 },
            width: REFERENCE_WIDTH,
            lambda_rec: 1.0,
            optimizer: AdamConfig::default(),
            batch_size: 64,
            epochs: 10,
            seed: 0,
            ablation: Ablation::default(),
        }
    }

    /// Width of the one-hot condition fed to the code generator.
    pub fn cond_dim(&self) -> i64 {
        if self.mode.is_conditional() {
            self.num_classes
        } else {
            0
        }
    }

    /// Width of the condition fed to the code discriminator (supervised only).
    pub fn code_cond_dim(&self) -> i64 {
        if self.mode == Conditioning::Supervised {
            self.num_classes
        } else {
            0
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.lambda_rec > 0.0) {
            return fail(format!("lambda_rec must be positive, got {}", self.lambda_rec));
        }
        if self.batch_size < 2 {
            return fail(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if self.mode.is_conditional() && self.num_classes < 2 {
            return fail(format!(
                "{} mode needs num_classes >= 2, got {}",
                self.mode, self.num_classes
            ));
        }
        if !self.mode.is_conditional() && self.num_classes != 0 {
            return fail("num_classes is meaningless in unconditional mode".into());
        }
        if !self.ablation.learned_prior && self.mode.is_conditional() {
            return fail("learned_prior = false is only supported in unconditional mode".into());
        }
        if self.channels != 1 && self.channels != 3 {
            return fail(format!("channels must be 1 or 3, got {}", self.channels));
        }
        for (what, v) in [
            ("code_dim", self.code_dim),
            ("noise_dim", self.noise_dim),
            ("width", self.width),
        ] {
            if v < 1 {
                return fail(format!("{what} must be at least 1, got {v}"));
            }
        }
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            ..
        } = self.optimizer;
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return fail(format!("learning_rate must be non-negative, got {learning_rate}"));
        }
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            return fail(format!("beta1/beta2 must lie in [0, 1), got {beta1}/{beta2}"));
        }
        Ok(())
    }

    /// Serialized form stored in checkpoints; parses back with [`TrainingConfig::from_text`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        let mut v = vec![
            ("mode", self.mode.to_string()),
            ("channels", self.channels.to_string()),
            ("code_dim", self.code_dim.to_string()),
            ("noise_dim", self.noise_dim.to_string()),
        ];
        if self.mode.is_conditional() {
            v.push(("num_classes", self.num_classes.to_string()));
        }
        v.extend([
            ("width", self.width.to_string()),
            ("lambda_rec", self.lambda_rec.to_string()),
            ("learning_rate", self.optimizer.learning_rate.to_string()),
            ("beta1", self.optimizer.beta1.to_string()),
            ("beta2", self.optimizer.beta2.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("learned_prior", self.ablation.learned_prior.to_string()),
            ("perceptual_loss", self.ablation.perceptual_loss.to_string()),
            ("decoder_both_phases", self.ablation.decoder_both_phases.to_string()),
            (
                "nonsaturating_generator",
                self.ablation.nonsaturating_generator.to_string(),
            ),
        ]);
        v
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut entries = parse_entries(text)?;
        let config = Self::take_from(&mut entries)?;
        reject_leftovers(&entries)?;
        Ok(config)
    }

    /// Consume this struct's keys from `entries`, applying defaults for missing ones.
    fn take_from(entries: &mut BTreeMap<String, String>) -> Result<Self> {
        let mode: Conditioning = entries
            .remove("mode")
            .ok_or_else(|| Error::Config("mode is required".into()))?
            .parse()?;
        let mut c = Self::new(mode);
        take(entries, "channels", &mut c.channels)?;
        take(entries, "code_dim", &mut c.code_dim)?;
        take(entries, "noise_dim", &mut c.noise_dim)?;
        if let Some(v) = entries.remove("num_classes") {
            if !mode.is_conditional() {
                return Err(Error::Config(
                    "num_classes is meaningless in unconditional mode".into(),
                ));
            }
            c.num_classes = parse_value("num_classes", &v)?;
        }
        take(entries, "width", &mut c.width)?;
        take(entries, "lambda_rec", &mut c.lambda_rec)?;
        take(entries, "learning_rate", &mut c.optimizer.learning_rate)?;
        take(entries, "beta1", &mut c.optimizer.beta1)?;
        take(entries, "beta2", &mut c.optimizer.beta2)?;
        take(entries, "batch_size", &mut c.batch_size)?;
        take(entries, "epochs", &mut c.epochs)?;
        take(entries, "seed", &mut c.seed)?;
        take(entries, "learned_prior", &mut c.ablation.learned_prior)?;
        take(entries, "perceptual_loss", &mut c.ablation.perceptual_loss)?;
        take(entries, "decoder_both_phases", &mut c.ablation.decoder_both_phases)?;
        take(
            entries,
            "nonsaturating_generator",
            &mut c.ablation.nonsaturating_generator,
        )?;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    Cifar10,
    Folder,
    Synthetic,
}

impl FromStr for DatasetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(Self::Mnist),
            "cifar10" => Ok(Self::Cifar10),
            "folder" => Ok(Self::Folder),
            "synthetic" => Ok(Self::Synthetic),
            other => Err(Error::Config(format!("unknown dataset {other:?}"))),
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mnist => "mnist",
            Self::Cifar10 => "cifar10",
            Self::Folder => "folder",
            Self::Synthetic => "synthetic",
        })
    }
}

/// Which data to train on.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub path: Option<PathBuf>,
    /// Keep only the first `limit` samples; 0 keeps everything.
    pub limit: usize,
    pub synthetic_size: usize,
}

impl DatasetSpec {
    /// Explicit path, else `$PRIORFORGE_DATA/<dataset>`.
    pub fn resolved_path(&self) -> Result<PathBuf> {
        if let Some(p) = &self.path {
            return Ok(p.clone());
        }
        match std::env::var_os(DATA_ENV) {
            Some(root) => Ok(Path::new(&root).join(self.kind.to_string())),
            None => Err(Error::Config(format!(
                "dataset {} needs data_path or the {DATA_ENV} environment variable",
                self.kind
            ))),
        }
    }
}

/// Everything a `train` invocation needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub training: TrainingConfig,
    pub dataset: DatasetSpec,
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn from_entries(mut entries: BTreeMap<String, String>) -> Result<Self> {
        let kind: DatasetKind = entries
            .remove("dataset")
            .ok_or_else(|| Error::Config("dataset is required".into()))?
            .parse()?;
        let path = entries.remove("data_path").map(PathBuf::from);
        let mut limit = 0usize;
        take(&mut entries, "dataset_limit", &mut limit)?;
        let mut synthetic_size = 1024usize;
        take(&mut entries, "synthetic_size", &mut synthetic_size)?;
        let output_dir = entries
            .remove("output_dir")
            .map_or_else(|| PathBuf::from("runs"), PathBuf::from);
        let training = TrainingConfig::take_from(&mut entries)?;
        reject_leftovers(&entries)?;
        Ok(Self {
            training,
            dataset: DatasetSpec {
                kind,
                path,
                limit,
                synthetic_size,
            },
            output_dir,
        })
    }
}

/// Parse `key = value` lines. Blank lines and `#` comments are ignored; a repeated
/// key is an error.
pub fn parse_entries(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key = value, got {raw:?}", lineno + 1))
        })?;
        let key = key.trim().to_string();
        if out.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key {key}", lineno + 1)));
        }
    }
    Ok(out)
}

pub fn read_entries(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_entries(&text)
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn take<T: FromStr>(entries: &mut BTreeMap<String, String>, key: &str, slot: &mut T) -> Result<()> {
    if let Some(v) = entries.remove(key) {
        *slot = parse_value(key, &v)?;
    }
    Ok(())
}

fn reject_leftovers(entries: &BTreeMap<String, String>) -> Result<()> {
    match entries.keys().next() {
        Some(k) => Err(Error::Config(format!("unknown key {k}"))),
        None => Ok(()),
    }
}
