//! Stage runner behind the `xmlwf` binary.
//!
//! Exit codes are stable:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | runtime failure (a created run is finalized as failed) |
//! | 2 | `init` target directory is not empty |
//! | 3 | I/O error |
//! | 4 | configuration or usage error (no run created) |
//! | 5 | run, experiment or store not found |
//! | 6 | stored artifact failed its hash or checksum |
//! | 7 | no correctly predicted samples to explain |

pub mod config;
mod stages;

use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use xmlwf_core::pipeline::PipelineError;
use xmlwf_core::report::ReportError;
use xmlwf_core::tracking::TrackingError;

pub use stages::{cmd_explain, cmd_init, cmd_runs, cmd_test, cmd_train, Globals};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_NOT_EMPTY: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;
pub const EXIT_NOT_FOUND: i32 = 5;
pub const EXIT_INTEGRITY: i32 = 6;
pub const EXIT_EMPTY_SELECTION: i32 = 7;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(EXIT_CONFIG, message)
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self::new(EXIT_RUNTIME, message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

fn pipeline_code(e: &PipelineError) -> i32 {
    match e {
        PipelineError::BadMagic
        | PipelineError::UnsupportedVersion(_)
        | PipelineError::TruncatedBlob
        | PipelineError::ChecksumMismatch
        | PipelineError::CorruptBlob(_) => EXIT_INTEGRITY,
        _ => EXIT_RUNTIME,
    }
}

impl From<TrackingError> for CliError {
    fn from(e: TrackingError) -> Self {
        let code = match &e {
            TrackingError::NotFound(_) => EXIT_NOT_FOUND,
            TrackingError::HashMismatch { .. } => EXIT_INTEGRITY,
            TrackingError::Pipeline(p) => pipeline_code(p),
            TrackingError::BadSlug(_) | TrackingError::Conflict(_) => EXIT_CONFIG,
            TrackingError::Io { .. } => EXIT_IO,
            _ => EXIT_RUNTIME,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        let code = match &e {
            ReportError::EmptySelection => EXIT_EMPTY_SELECTION,
            _ => EXIT_RUNTIME,
        };
        CliError::new(code, e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "xmlwf",
    version,
    about = "Tracked, explainable binary-classification experiments"
)]
pub struct Cli {
    /// Directory holding constants.toml and stages/.
    #[arg(long, global = true, default_value = ".")]
    pub config: PathBuf,
    /// Overrides the experiment seed from constants.toml.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Machine-readable output.
    #[arg(long, global = true)]
    pub json: bool,
    /// Stage-layer override, e.g. `--set search.grid.l2=[0.1]`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Seeds run-id generation so two stores can be compared byte for byte.
    #[arg(long, global = true, hide = true)]
    pub run_id_seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scaffold a project with configs and a demo dataset.
    Init {
        directory: PathBuf,
        /// Experiment name ([a-z0-9-]+).
        #[arg(long, default_value = "demo")]
        name: String,
        /// Feature count of the generated demo data.
        #[arg(long, hide = true, default_value_t = 10)]
        demo_features: usize,
    },
    /// Split, search, refit and log a new run.
    Train {
        /// Re-run from another run's snapshots, params and seed.
        #[arg(long, value_name = "RUN_ID")]
        replay: Option<String>,
    },
    /// Score a run's model on its held-out snapshot.
    Test { run_id: String },
    /// Attribute a run's predictions and render importance charts.
    Explain { run_id: String },
    /// List runs.
    Runs {
        /// `started_at` or a metric name such as `test.roc_auc`.
        #[arg(long, default_value = "started_at")]
        sort: String,
    },
}

/// Parses `args` and runs the command. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    return EXIT_OK;
                }
                _ => EXIT_CONFIG,
            };
            let _ = write!(err, "{e}");
            return code;
        }
    };
    let globals = Globals {
        config_dir: cli.config.clone(),
        seed: cli.seed,
        json: cli.json,
        overrides: cli.set.clone(),
        run_id_seed: cli.run_id_seed,
    };
    let result = match &cli.command {
        Command::Init {
            directory,
            name,
            demo_features,
        } => cmd_init(directory, name, *demo_features, out),
        Command::Train { replay } => cmd_train(&globals, replay.as_deref(), out, err),
        Command::Test { run_id } => cmd_test(&globals, run_id, out),
        Command::Explain { run_id } => cmd_explain(&globals, run_id, out, err),
        Command::Runs { sort } => cmd_runs(&globals, sort, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.code
        }
    }
}
