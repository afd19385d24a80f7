use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use biaffine_ner::checkpoint::write_checkpoint_file;
use biaffine_ner::config::TrainConfig;
use biaffine_ner::data::{AnnotatedSentence, Categories};
use biaffine_ner::embedding::CharVocab;
use biaffine_ner::error::Error;
use biaffine_ner::model::{Dataset, Model};
use biaffine_ner::train::{fit, FitOptions};
use clap::Args;
use log::info;
use serde::Serialize;

use crate::{corpus, ConfigArgs, Format};

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Corpus format; guessed from the extension when omitted.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Static word vectors in text format.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// CTXV contextual vectors for the training corpus.
    #[arg(long)]
    pub contextual_train: Option<PathBuf>,
    #[arg(long)]
    pub contextual_dev: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Log training-set F1 after every epoch.
    #[arg(long)]
    pub eval_train: bool,
    /// Stop as soon as training-set F1 reaches this value.
    #[arg(long)]
    pub stop_at_train_f1: Option<f64>,
    /// Override the configured epoch count.
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    config: String,
    seed: u64,
    train: &'a Path,
    dev: Option<&'a Path>,
    embeddings: Option<&'a Path>,
    contextual_train: Option<&'a Path>,
    contextual_dev: Option<&'a Path>,
    /// Relative to the directory holding the manifest.
    checkpoint: &'static str,
    metrics: &'static str,
    categories: Vec<String>,
    train_sentences: usize,
    dev_sentences: usize,
    epochs_run: usize,
    selected_epoch: usize,
    reached_target: Option<bool>,
}

/// Preset (default `default`), then the config file, then `--set`, then the
/// dedicated `--seed` and `--mode` flags.
pub fn build_config(args: &ConfigArgs) -> Result<TrainConfig> {
    let mut config = TrainConfig::preset(args.preset.as_deref().unwrap_or("default"))?;
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path)
            .map_err(Error::from)
            .with_context(|| format!("reading {}", path.display()))?;
        config.apply_text(&text, &path.display().to_string())?;
    }
    config.apply_overrides(&args.set)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(mode) = args.mode {
        config.decode_mode = mode.into();
    }
    config.validate()?;
    Ok(config)
}

fn load_split(
    path: &Path,
    format: Option<Format>,
    contextual: Option<&Path>,
) -> Result<Dataset> {
    let mut data = Dataset::new(corpus::read(path, format)?);
    if let Some(ctx) = corpus::read_contextual(contextual)? {
        data = data.with_contextual(ctx);
    }
    Ok(data)
}

pub fn run(args: TrainArgs) -> Result<()> {
    let config = build_config(&args.config)?;
    let mut train = load_split(&args.train, args.format, args.contextual_train.as_deref())?;
    let mut dev = match &args.dev {
        Some(p) => Some(load_split(p, args.format, args.contextual_dev.as_deref())?),
        None => None,
    };
    if config.train_on_dev {
        if let Some(d) = dev.take() {
            if train.contextual.is_some() || d.contextual.is_some() {
                return Err(Error::Config(
                    "train_on_dev cannot merge contextual vector files; drop --dev or train_on_dev"
                        .into(),
                )
                .into());
            }
            train.sentences.extend(d.sentences);
        }
    }
    let static_table = corpus::read_static(args.embeddings.as_deref())?;

    let all: Vec<&AnnotatedSentence> = train
        .sentences
        .iter()
        .chain(dev.iter().flat_map(|d| d.sentences.iter()))
        .collect();
    let categories = Categories::from_sentences(all.iter().copied());
    let chars = CharVocab::from_sentences(&train.sentences);
    let mut model = Model::new(config.clone(), categories, chars, static_table.as_ref())?;
    model.check_resources(static_table.as_ref(), train.contextual.as_ref())?;
    if let Some(d) = &dev {
        model.check_resources(static_table.as_ref(), d.contextual.as_ref())?;
    }

    fs::create_dir_all(&args.out)
        .map_err(Error::from)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let metrics_path = args.out.join("metrics.jsonl");
    let checkpoint_path = args.out.join("model.bner");
    let mut metrics = BufWriter::new(
        File::create(&metrics_path)
            .map_err(Error::from)
            .with_context(|| format!("creating {}", metrics_path.display()))?,
    );
    fs::write(args.out.join("config.txt"), config.to_text()).map_err(Error::from)?;

    let options = FitOptions {
        eval_train: args.eval_train,
        target_train_f1: args.stop_at_train_f1,
        max_epochs: args.max_epochs,
    };
    let train_examples = train.examples();
    let dev_examples = dev.as_ref().map(|d| d.examples());
    let mut write_err: Option<std::io::Error> = None;
    let result = fit(
        &mut model,
        &train_examples,
        dev_examples.as_deref(),
        static_table.as_ref(),
        &options,
        |record| {
            let line = serde_json::to_string(record).expect("record serializes");
            if let Err(e) = writeln!(metrics, "{}", line).and_then(|_| metrics.flush()) {
                write_err.get_or_insert(e);
            }
        },
    )?;
    if let Some(e) = write_err {
        return Err(Error::from(e)).context("writing metrics log");
    }
    write_checkpoint_file(&model, &checkpoint_path)
        .with_context(|| format!("writing {}", checkpoint_path.display()))?;

    let manifest = Manifest {
        config: config.to_text(),
        seed: config.seed,
        train: &args.train,
        dev: if config.train_on_dev { None } else { args.dev.as_deref() },
        embeddings: args.embeddings.as_deref(),
        contextual_train: args.contextual_train.as_deref(),
        contextual_dev: args.contextual_dev.as_deref(),
        checkpoint: "model.bner",
        metrics: "metrics.jsonl",
        categories: model.categories().names().to_vec(),
        train_sentences: train.len(),
        dev_sentences: dev.as_ref().map_or(0, |d| d.len()),
        epochs_run: result.history.len(),
        selected_epoch: result.selected_epoch,
        reached_target: args.stop_at_train_f1.map(|_| result.reached_target),
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(args.out.join("manifest.json"), json + "\n").map_err(Error::from)?;

    let last = result.history.last().expect("at least one epoch");
    info!("wrote {}", checkpoint_path.display());
    println!(
        "epochs {}  selected {}  loss {:.6}{}{}",
        result.history.len(),
        result.selected_epoch,
        last.loss,
        last.train_f1
            .map_or(String::new(), |f| format!("  train F1 {:.2}", 100.0 * f)),
        result.history[result.selected_epoch - 1]
            .dev_f1
            .map_or(String::new(), |f| format!("  dev F1 {:.2}", 100.0 * f)),
    );
    Ok(())
}
