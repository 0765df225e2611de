//! Command-line front end: `generate`, `train`, `eval`, `infer`, `bench`.
//!
//! Exit codes are 0 on success, 1 for usage errors (bad flags, missing
//! input files, invalid configuration) and 2 for runtime failures.

mod commands;
mod overrides;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

pub use commands::{BenchConfig, BenchSummary, GenerateConfig, RunManifest};
pub use overrides::{apply as apply_overrides, extract_dotted};

/// Environment variable consulted when `--parallelism` is absent.
pub const THREADS_ENV: &str = "CORRIDOR_TWIN_THREADS";

/// A problem with how the tool was invoked.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(#[from] UsageError),
    #[error(transparent)]
    Runtime(#[from] crate::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 1,
            Self::Runtime(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "corridor-twin", version, about = "Graph digital twin for signalized corridors")]
#[command(after_help = "Any config field can be overridden with --set path=value or --path.to.field=value.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON config file for the subcommand.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; falls back to CORRIDOR_TWIN_THREADS, then to the
    /// number of CPUs.
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate scenarios and write a dataset plus manifest.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<usize>,
        /// Directory for per-vehicle event logs of the first scenarios.
        #[arg(long)]
        event_log: Option<PathBuf>,
        /// How many scenarios get an event log.
        #[arg(long, default_value_t = 1)]
        event_log_count: usize,
    },
    /// Train the four modules in sequence and write a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Score a checkpoint and write report.csv, metrics.jsonl and charts.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Score every scenario instead of the held-out split.
        #[arg(long)]
        all: bool,
    },
    /// Predict every scenario of a dataset file as JSON lines.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Time batch prediction on synthetic scenarios.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<usize>,
        /// Checkpoint to time; an untrained default model otherwise.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Skip the single-thread comparison run.
        #[arg(long)]
        no_baseline: bool,
    },
}

/// Parses `args` (without the program name) and runs the subcommand.
pub fn run<I, S>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = S>,
    S: Into<OsString>,
{
    let args: Vec<String> = args
        .into_iter()
        .map(|a| a.into().into_string().map_err(|a| UsageError(format!("argument is not UTF-8: {a:?}"))))
        .collect::<Result<_, _>>()?;
    let (rest, dotted) = extract_dotted(args)?;
    let cli = match Cli::try_parse_from(std::iter::once("corridor-twin".to_owned()).chain(rest)) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(UsageError(e.to_string().trim_end().to_owned()).into()),
    };
    match cli.command {
        Command::Generate {
            common,
            n,
            event_log,
            event_log_count,
        } => commands::generate(&common, &dotted, n, event_log, event_log_count),
        Command::Train { common, data } => commands::train(&common, &dotted, &data),
        Command::Eval { common, data, model, all } => commands::eval(&common, &dotted, &data, &model, all),
        Command::Infer { common, data, model } => commands::infer(&common, &dotted, &data, &model),
        Command::Bench {
            common,
            n,
            model,
            no_baseline,
        } => commands::bench(&common, &dotted, n, model.as_deref(), !no_baseline),
    }
}

/// Entry point for the binary: runs `std::env::args` and maps the result
/// to an exit code, printing help and errors as needed.
pub fn main() -> ExitCode {
    let args: Vec<OsString> = std::env::args_os().skip(1).collect();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
