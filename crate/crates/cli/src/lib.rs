//! The `memc` command-line tool.
//!
//! Every command resolves its settings as defaults, then flags, then the
//! optional `--config` JSON file, and writes a `meta.json` holding the
//! resolved values next to its outputs.

use std::fmt;
use std::path::Path;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use memc_core::io::DataRef;
use memc_core::SequenceDataset;

pub mod baseline;
pub mod fit;
pub mod report;
pub mod simulate;

pub const TOOL: &str = "memc";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "memc", version, about = "Bayesian mixed-effects Markov chains for categorical sequences")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the model to a dataset and write a result bundle.
    Fit(fit::FitArgs),
    /// Generate scenario datasets with their ground truth.
    Simulate(simulate::SimulateArgs),
    /// Run the per-sequence rank-sum comparator.
    Baseline(baseline::BaselineArgs),
    /// Render heatmaps and tables from a result bundle.
    Report(report::ReportArgs),
}

/// Failure classes, each with its own exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Other,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            kind: ErrorKind::Config,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Other => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<memc_core::Error> for CliError {
    fn from(e: memc_core::Error) -> Self {
        use memc_core::Error as E;
        let kind = match &e {
            E::Config(_) | E::Dimension(_) | E::Domain(_) => ErrorKind::Config,
            E::NotErgodic(_) => ErrorKind::Data,
            other if other.is_data_error() => ErrorKind::Data,
            _ => ErrorKind::Other,
        };
        CliError {
            kind,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Fit(args) => fit::run(&args).map(|_| ()),
        Command::Simulate(args) => simulate::run(&args),
        Command::Baseline(args) => baseline::run(&args),
        Command::Report(args) => report::run(&args),
    }
}

/// Loads a `--config` file; any failure is a configuration error.
pub(crate) fn load_config<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> CliResult<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::config(format!("invalid config {}: {e}", path.display())))
}

pub(crate) fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError {
        kind: ErrorKind::Other,
        message: format!("cannot create {}: {e}", path.display()),
    })
}

pub(crate) fn write_json<T: Serialize>(value: &T, path: &Path) -> CliResult<()> {
    memc_core::io::write_json(value, path).map_err(|e| CliError {
        kind: ErrorKind::Other,
        message: e.to_string(),
    })
}

pub(crate) fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError {
        kind: ErrorKind::Data,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    Ok(format!("{:x}", Sha256::digest(bytes)))
}

pub(crate) fn data_ref(path: &Path, dataset: &SequenceDataset) -> CliResult<DataRef> {
    Ok(DataRef {
        path: path.display().to_string(),
        sha256: sha256_file(path)?,
        sequences: dataset.len(),
        transitions: dataset.total_transitions(),
    })
}

/// Warns when a rerun from a recorded `meta.json` reads different data.
pub(crate) fn check_recorded_hash(recorded: Option<&DataRef>, actual: &DataRef) {
    if let Some(r) = recorded {
        if r.sha256 != actual.sha256 {
            log::warn!("{} differs from the recorded input {} (sha256 mismatch)", actual.path, r.path);
        }
    }
}
