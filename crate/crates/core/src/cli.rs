//! Command-line surface: `train`, `generate`, `evaluate`, `export-latents` and
//! `train-classifier`.
//!
//! `train` settings come from, in increasing precedence: built-in defaults, the
//! `--config` file, `--set key=value` pairs, then the dedicated flags.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{self, DatasetKind, DatasetSpec, RunConfig};
use crate::data::{self, DatasetHandle};
use crate::error::{Error, Result};
use crate::evaluation::{self, ClassifierConfig, TrainedClassifier, DEFAULT_SPLITS};
use crate::model::Model;
use crate::sampling::{self, LabelChoice, LatentSource};
use crate::training;

/// Classes used for the synthetic corpus when the model itself is unconditional.
const SYNTHETIC_DEFAULT_CLASSES: usize = 10;

#[derive(Debug, Parser)]
#[command(name = "priorforge", version, about = "Adversarial autoencoder with a learned prior")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write per-epoch checkpoints plus a metrics log.
    Train(TrainArgs),
    /// Decode prior samples into a PNG tile.
    Generate(GenerateArgs),
    /// Score samples with a trained classifier.
    Evaluate(EvaluateArgs),
    /// Dump encoder or code generator outputs as delimited text.
    ExportLatents(ExportArgs),
    /// Train the classifier used by `evaluate`.
    TrainClassifier(ClassifierArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub data_path: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub num_classes: Option<usize>,
    #[arg(long)]
    pub code_dim: Option<usize>,
    #[arg(long)]
    pub noise_dim: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Any configuration key, e.g. `--set width=16`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Number of samples (ignored with --grid).
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    /// Label-by-noise grid: one row per noise draw, one column per class.
    #[arg(long)]
    pub grid: bool,
    /// Rows of the --grid tile.
    #[arg(long, default_value_t = 8)]
    pub rows: usize,
    /// Class for every sample, or `sweep` to cycle through the classes.
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub classifier: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = DEFAULT_SPLITS)]
    pub splits: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Source {
    Encoder,
    CodeGenerator,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub data_path: Option<PathBuf>,
    /// Keep only the first N samples (0 keeps all).
    #[arg(long, default_value_t = 0)]
    pub limit: usize,
    #[arg(long, default_value_t = 1024)]
    pub synthetic_size: usize,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum)]
    pub source: Source,
    #[command(flatten)]
    pub data: DataArgs,
    /// Draws for --source code-generator.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClassifierArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Classes of the synthetic corpus.
    #[arg(long, default_value_t = SYNTHETIC_DEFAULT_CLASSES)]
    pub num_classes: usize,
    #[arg(long, default_value_t = 3)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub width: i64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Minimum held-out accuracy.
    #[arg(long, default_value_t = 0.95)]
    pub floor: f64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::ExportLatents(a) => cmd_export_latents(a),
        Command::TrainClassifier(a) => cmd_train_classifier(a),
    }
}

/// Merge file entries and command-line overrides into a run configuration.
pub fn resolve_train_config(args: &TrainArgs) -> Result<RunConfig> {
    let mut entries = match &args.config {
        Some(path) => config::read_entries(path)?,
        None => BTreeMap::new(),
    };
    for pair in &args.set {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {pair:?}")))?;
        entries.insert(k.trim().to_string(), v.trim().to_string());
    }
    let mut put = |key: &str, value: Option<String>| {
        if let Some(v) = value {
            entries.insert(key.to_string(), v);
        }
    };
    put("dataset", args.dataset.clone());
    put("data_path", args.data_path.as_ref().map(|p| p.display().to_string()));
    put("mode", args.mode.clone());
    put("epochs", args.epochs.map(|v| v.to_string()));
    put("num_classes", args.num_classes.map(|v| v.to_string()));
    put("code_dim", args.code_dim.map(|v| v.to_string()));
    put("noise_dim", args.noise_dim.map(|v| v.to_string()));
    put("batch_size", args.batch_size.map(|v| v.to_string()));
    put("seed", args.seed.map(|v| v.to_string()));
    put("output_dir", args.output_dir.as_ref().map(|p| p.display().to_string()));
    RunConfig::from_entries(entries)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut run = resolve_train_config(&args)?;
    let t = &run.training;
    let classes = if t.mode.is_conditional() {
        t.num_classes as usize
    } else {
        SYNTHETIC_DEFAULT_CLASSES
    };
    let dataset = data::load(&run.dataset, t.channels, classes, t.seed)?;
    run.training.channels = dataset.channels();
    log::info!(
        "training {} on {} ({} images) into {}",
        run.training.mode,
        dataset.name,
        dataset.len(),
        run.output_dir.display()
    );
    training::run_training(&run.training, &dataset, Some(&run.output_dir))?;
    Ok(())
}

fn parse_label(label: Option<&str>) -> Result<LabelChoice> {
    match label {
        None => Ok(LabelChoice::Random),
        Some("sweep") => Ok(LabelChoice::Sweep),
        Some(s) => s
            .parse()
            .map(LabelChoice::Fixed)
            .map_err(|_| Error::Config(format!("--label expects a class index or 'sweep', got {s:?}"))),
    }
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let model = Model::load(&args.checkpoint)?;
    let image = if args.grid {
        if args.label.is_some() {
            return Err(Error::Config("--grid already sweeps the labels".into()));
        }
        let images = sampling::label_noise_grid(&model, args.rows, args.seed)?;
        sampling::tile(&images, args.rows, model.config.num_classes as usize)?
    } else {
        if args.n == 0 {
            return Err(Error::Config("--n must be at least 1".into()));
        }
        let draw = sampling::sample_prior(&model, args.n, parse_label(args.label.as_deref())?, args.seed)?;
        let images = sampling::generate_images(&model, &draw.codes)?;
        let cols = (args.n as f64).sqrt().ceil() as usize;
        sampling::tile(&images, args.n.div_ceil(cols), cols)?
    };
    sampling::save_png(&image, &args.out)
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let model = Model::load(&args.checkpoint)?;
    let classifier = TrainedClassifier::load(&args.classifier)?;
    let report = evaluation::evaluate(&model, &classifier, args.n, args.splits, args.seed)?;
    let text = report.to_text();
    if let Some(out) = &args.out {
        crate::checkpoint::write_atomic(out, text.as_bytes())?;
    }
    let mut stdout = std::io::stdout().lock();
    stdout
        .write_all(text.as_bytes())
        .map_err(|e| Error::io("stdout", e))
}

fn load_dataset(args: &DataArgs, channels: i64, classes: usize, seed: u64) -> Result<DatasetHandle> {
    let kind: DatasetKind = args
        .dataset
        .as_deref()
        .ok_or_else(|| Error::Config("--dataset is required".into()))?
        .parse()?;
    let spec = DatasetSpec {
        kind,
        path: args.data_path.clone(),
        limit: args.limit,
        synthetic_size: args.synthetic_size,
    };
    data::load(&spec, channels, classes, seed)
}

fn cmd_export_latents(args: ExportArgs) -> Result<()> {
    let model = Model::load(&args.checkpoint)?;
    let dump = match args.source {
        Source::Encoder => {
            if args.data.dataset.is_none() {
                return Err(Error::Config("--source encoder needs --dataset".into()));
            }
            let c = &model.config;
            let classes = if c.mode.is_conditional() {
                c.num_classes as usize
            } else {
                SYNTHETIC_DEFAULT_CLASSES
            };
            let data = load_dataset(&args.data, c.channels, classes, args.seed)?;
            if data.channels() != c.channels {
                return Err(Error::Data(format!(
                    "dataset has {} channels, the model expects {}",
                    data.channels(),
                    c.channels
                )));
            }
            sampling::export_latents(&model, LatentSource::Encoder(&data))?
        }
        Source::CodeGenerator => sampling::export_latents(
            &model,
            LatentSource::CodeGenerator {
                n: args.n,
                seed: args.seed,
            },
        )?,
    };
    dump.save(&args.out)
}

fn cmd_train_classifier(args: ClassifierArgs) -> Result<()> {
    let data = load_dataset(&args.data, 1, args.num_classes, args.seed)?;
    let config = ClassifierConfig {
        epochs: args.epochs,
        width: args.width,
        accuracy_floor: args.floor,
        seed: args.seed,
        ..ClassifierConfig::default()
    };
    let clf = evaluation::train_eval_classifier(&data, &config)?;
    println!("accuracy = {}", clf.accuracy);
    clf.save(&args.out)
}
