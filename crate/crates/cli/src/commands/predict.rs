use std::path::PathBuf;

use anyhow::{Context, Result};
use biaffine_ner::checkpoint::read_model_file;
use biaffine_ner::data::conll::write_conll_file;
use biaffine_ner::data::jsonl::write_spans_file;
use biaffine_ner::decoder::DecodeMode;
use biaffine_ner::model::Dataset;
use clap::Args;

use crate::{corpus, ExitError, Format, Mode, EXIT_INPUT};

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub contextual: Option<PathBuf>,
    /// Defaults to the mode stored in the checkpoint.
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// JSON-lines predictions.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write CoNLL tags (flat mode only).
    #[arg(long)]
    pub conll_out: Option<PathBuf>,
}

pub fn run(args: PredictArgs) -> Result<()> {
    let model = read_model_file(&args.model)
        .with_context(|| format!("loading {}", args.model.display()))?;
    let mode: DecodeMode = args
        .mode
        .map(Into::into)
        .unwrap_or(model.config().decode_mode);
    if args.conll_out.is_some() && mode != DecodeMode::Flat {
        return Err(ExitError {
            code: EXIT_INPUT,
            message: "--conll-out needs flat decoding".into(),
        }
        .into());
    }
    let mut data = Dataset::new(corpus::read(&args.input, args.format)?);
    let static_table = corpus::read_static(args.embeddings.as_deref())?;
    if let Some(ctx) = corpus::read_contextual(args.contextual.as_deref())? {
        data = data.with_contextual(ctx);
    }
    model.check_resources(static_table.as_ref(), data.contextual.as_ref())?;
    let pred = model.predict_all(&data.examples(), static_table.as_ref(), mode)?;
    write_spans_file(&args.out, &pred)
        .with_context(|| format!("writing {}", args.out.display()))?;
    if let Some(path) = &args.conll_out {
        write_conll_file(path, &pred).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}
