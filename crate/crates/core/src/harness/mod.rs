//! Experiment runner: TOML configs, per-run CSV logs, hyperparameter grids
//! and suite summaries.
//!
//! Output goes under the directory named by the `RLLC_OUT` environment
//! variable, or the working directory when it is unset.

mod config;
mod law;
mod run;
mod suite;

use std::path::{Path, PathBuf};

pub use config::{ConfigFile, DataSpec, ExperimentConfig, GridSpec, OptimizerSpec, TaskSpec};
pub use law::{dump_law_trajectory, write_law_dump, LawRow, NAG_BAND};
pub use run::{read_run, run_experiment, write_run, LogRow, RunRecord, RunSummary};
pub use suite::{run_suite, CellSummary, Stats, SuiteOptions, SuiteOutcome};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed run log {path}: {reason}")]
    BadLog { path: String, reason: String },
    #[error("{0} has no learning law to dump")]
    NotLawBased(String),
    #[error(transparent)]
    Task(#[from] crate::tasks::TaskError),
    #[error(transparent)]
    Optim(#[from] crate::optim::OptimError),
    #[error(transparent)]
    Propagator(#[from] crate::propagators::PropagatorError),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

pub const OUTPUT_ENV: &str = "RLLC_OUT";

/// Root directory for all harness output.
pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ENV).map_or_else(|| PathBuf::from("."), PathBuf::from)
}

/// File-system-safe form of a cell name: `M(0.9)/lr=0.01` becomes
/// `M_0.9__lr=0.01`.
pub fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "._-=".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

pub(crate) fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}
