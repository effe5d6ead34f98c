//! Batch experiment runner for the exactly solvable hybrid model.

pub mod config;
pub mod observables;
pub mod run;
pub mod svg;
pub mod verify;

use thiserror::Error;

pub use config::{parse_config, parse_config_str, Experiment, ExperimentConfig, Solver};
pub use observables::{emit_observables, parse_observables, ObservableRow, CSV_HEADER};
pub use run::{run_experiment, RunSummary};
pub use verify::{verify, CheckResult};

pub const VERSION_TAG: &str = "koopman-hybrid-sim v0.1";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {msg}")]
    InvalidValue { key: String, msg: String },
    #[error("duplicate config key `{0}`")]
    DuplicateKey(String),
    #[error("line {line}: expected key=value, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("missing required key `experiment`")]
    MissingExperiment,
    #[error("{0}")]
    Config(String),
    #[error("invariant breach: {0}")]
    InvariantBreach(String),
    #[error(transparent)]
    Core(#[from] khs_core::KhsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;
