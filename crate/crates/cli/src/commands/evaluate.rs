use std::path::PathBuf;

use anyhow::Result;
use biaffine_ner::eval::{category_table, evaluate};
use clap::Args;

use crate::{corpus, Format};

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Print the report as one JSON object.
    #[arg(long)]
    pub json: bool,
}

pub fn run(args: EvaluateArgs) -> Result<()> {
    let gold = corpus::read(&args.gold, args.format)?;
    let pred = corpus::read(&args.pred, args.format)?;
    let report = evaluate(&gold, &pred)?;
    if args.json {
        println!("{}", report.to_json());
    } else {
        print!("{}", category_table(&report));
    }
    Ok(())
}
