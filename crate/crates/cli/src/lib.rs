//! Command-line front end of wavelab: configuration, dispatch and result output.

pub mod config;
pub mod run;

use thiserror::Error;
use wavelab::analytics::AnalyticsError;
use wavelab::experiments::ExperimentError;
use wavelab::ode_lab::OdeError;
use wavelab::radial_solver::SolverError;
use wavelab::testfn_lab::TestFnError;

pub use config::{parse_args, parse_config_text, CommandKind, Format, RunConfig, Value};
pub use run::execute;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Clap(#[from] clap::Error),
    #[error("key '{key}': {message}")]
    Usage { key: String, message: String },
    /// The computation ran but did not reach its scientific goal.
    #[error("{0}")]
    InBand(String),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    TestFn(#[from] TestFnError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("cannot write results: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot encode results: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn usage(key: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Usage {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Clap(e) => e.exit_code(),
            CliError::Usage { .. } => 2,
            CliError::InBand(_) => 1,
            _ => 3,
        }
    }
}
