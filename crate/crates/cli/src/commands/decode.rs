use std::fs::File;
use std::io::{BufReader, Write};
use std::path::PathBuf;

use anyhow::{Context, Result};
use biaffine_ner::decoder::decode;
use biaffine_ner::error::Error;
use biaffine_ner::scores::ScoreTensor;
use clap::Args;

use crate::Mode;

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// SCOR score dump.
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long, value_enum, default_value = "nested")]
    pub mode: Mode,
    /// Names for categories 1.., comma separated. Indices are printed without it.
    #[arg(long, value_delimiter = ',')]
    pub categories: Option<Vec<String>>,
}

pub fn run(args: DecodeArgs) -> Result<()> {
    let file = File::open(&args.scores)
        .map_err(Error::from)
        .with_context(|| format!("opening {}", args.scores.display()))?;
    let scores = ScoreTensor::read_dump(BufReader::new(file))
        .with_context(|| format!("reading {}", args.scores.display()))?;
    if let Some(names) = &args.categories {
        if names.len() + 1 != scores.categories() {
            return Err(Error::Mismatch(format!(
                "{} category names given, dump has {} classes besides the non-entity class",
                names.len(),
                scores.categories().saturating_sub(1)
            ))
            .into());
        }
    }
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for ls in decode(&scores, args.mode.into()) {
        let category = match &args.categories {
            Some(names) => names[ls.category - 1].clone(),
            None => ls.category.to_string(),
        };
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            ls.span.start(),
            ls.span.end(),
            category,
            ls.score
        )?;
    }
    Ok(())
}
