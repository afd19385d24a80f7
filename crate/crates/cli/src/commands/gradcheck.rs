use anyhow::Result;
use biaffine_ner::gradcheck::TOLERANCE;
use biaffine_ner::train::reduced_gradcheck;
use clap::Args;

use crate::{ExitError, EXIT_INTERNAL};

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

pub fn run(args: GradcheckArgs) -> Result<()> {
    let report = reduced_gradcheck(args.seed)?;
    let mut failed = 0;
    for (name, r) in &report {
        let ok = r.relative_error < TOLERANCE;
        if !ok {
            failed += 1;
        }
        println!(
            "{}\t{}\t{:.3e}",
            if ok { "PASS" } else { "FAIL" },
            name,
            r.relative_error
        );
    }
    if failed > 0 {
        return Err(ExitError {
            code: EXIT_INTERNAL,
            message: format!(
                "{} of {} parameter groups exceed relative error {:e}",
                failed,
                report.len(),
                TOLERANCE
            ),
        }
        .into());
    }
    println!("all {} parameter groups within {:e}", report.len(), TOLERANCE);
    Ok(())
}
