use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use biaffine_ner::data::synth::{embeddings, generate, generate_splits, SynthKind};
use biaffine_ner::error::Error;
use clap::Args;

use crate::{corpus, ExitError, Format, EXIT_INPUT};

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// flat or nested.
    #[arg(long, default_value = "flat")]
    pub kind: SynthKind,
    #[arg(long, default_value_t = 200)]
    pub size: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Sentences in a held-out split disjoint from the main one.
    #[arg(long)]
    pub heldout: Option<usize>,
    #[arg(long)]
    pub heldout_out: Option<PathBuf>,
    /// Also write random static vectors for the vocabulary.
    #[arg(long)]
    pub embeddings_out: Option<PathBuf>,
    #[arg(long, default_value_t = 300)]
    pub dim: usize,
}

pub fn run(args: SynthArgs) -> Result<()> {
    let (train, heldout) = match (args.heldout, &args.heldout_out) {
        (Some(n), Some(_)) => {
            let (t, h) = generate_splits(args.kind, args.size, n, args.seed);
            (t, Some(h))
        }
        (None, None) => (generate(args.kind, args.size, args.seed, "train-"), None),
        _ => {
            return Err(ExitError {
                code: EXIT_INPUT,
                message: "--heldout and --heldout-out go together".into(),
            }
            .into())
        }
    };
    corpus::write(&args.out, args.format, &train)?;
    if let (Some(h), Some(path)) = (heldout, &args.heldout_out) {
        corpus::write(path, args.format, &h)?;
    }
    if let Some(path) = &args.embeddings_out {
        let mut buf = Vec::new();
        embeddings(args.dim, args.seed).write_text(&mut buf)?;
        fs::write(path, buf)
            .map_err(Error::from)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}
