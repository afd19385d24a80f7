//! The `bner` command-line tool.
//!
//! Exit codes: 0 success, 2 input error, 3 configuration mismatch,
//! 4 internal invariant violation.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod corpus;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "bner", version, about = "Biaffine span-based named entity recognition")]
pub struct Cli {
    /// Worker threads for per-sentence parallelism (results do not depend on it).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Nested,
    Flat,
}

impl From<Mode> for biaffine_ner::decoder::DecodeMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Nested => Self::Nested,
            Mode::Flat => Self::Flat,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Conll,
    Jsonl,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// key=value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Named preset applied before the config file: default, conll or genia.
    #[arg(long)]
    pub preset: Option<String>,
    /// Override one key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a checkpoint, metrics log and manifest.
    Train(commands::train::TrainArgs),
    /// Tag a corpus with a trained model.
    Predict(commands::predict::PredictArgs),
    /// Score predictions against gold annotations.
    Evaluate(commands::evaluate::EvaluateArgs),
    /// Decode a SCOR score dump without the neural model.
    Decode(commands::decode::DecodeArgs),
    /// Compare analytic and numerical gradients on a reduced model.
    Gradcheck(commands::gradcheck::GradcheckArgs),
    /// Generate a seeded synthetic corpus.
    Synth(commands::synth::SynthArgs),
    /// Check that a corpus satisfies flat or nested span constraints.
    Validate(commands::validate::ValidateArgs),
}

/// Error carrying an explicit exit code.
#[derive(Debug)]
pub struct ExitError {
    pub code: i32,
    pub message: String,
}

impl std::fmt::Display for ExitError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for ExitError {}

/// Exit code for an error chain.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    use biaffine_ner::error::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<ExitError>() {
            return e.code;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Io(_) | E::Parse { .. } | E::Format { .. } | E::Data(_) => EXIT_INPUT,
                E::Config(_) | E::Mismatch(_) => EXIT_CONFIG,
                E::Tensor(_) => EXIT_INTERNAL,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_INPUT;
        }
    }
    EXIT_INTERNAL
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("BNER_LOG", "warn");
    let _ = env_logger::Builder::from_env(env)
        .format_timestamp(None)
        .try_init();
}

pub fn execute(cli: Cli) -> anyhow::Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(ExitError {
                code: EXIT_INPUT,
                message: "--threads must be at least 1".into(),
            }
            .into());
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build()?;
    pool.install(|| match cli.command {
        Command::Train(a) => commands::train::run(a),
        Command::Predict(a) => commands::predict::run(a),
        Command::Evaluate(a) => commands::evaluate::run(a),
        Command::Decode(a) => commands::decode::run(a),
        Command::Gradcheck(a) => commands::gradcheck::run(a),
        Command::Synth(a) => commands::synth::run(a),
        Command::Validate(a) => commands::validate::run(a),
    })
}

/// Parse arguments, run, and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {:#}", e);
            exit_code(&e)
        }
    }
}
