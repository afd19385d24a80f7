use std::path::PathBuf;

use anyhow::Result;
use biaffine_ner::data::{validate_flat, validate_nested};
use clap::Args;

use crate::{corpus, Format, Mode};

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long, value_enum, default_value = "nested")]
    pub mode: Mode,
}

pub fn run(args: ValidateArgs) -> Result<()> {
    let sentences = corpus::read(&args.input, args.format)?;
    match args.mode {
        Mode::Flat => validate_flat(&sentences)?,
        Mode::Nested => validate_nested(&sentences)?,
    }
    let entities: usize = sentences.iter().map(|s| s.entities().len()).sum();
    println!(
        "ok: {} sentences, {} entities",
        sentences.len(),
        entities
    );
    Ok(())
}
