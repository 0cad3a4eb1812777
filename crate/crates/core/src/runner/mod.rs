//! Scenario driver: discrete-time simulation runs and the long-running
//! service mode.
//!
//! A run advances every link by one tick, applies due faults, lets each
//! encryptor pair refresh and exchange traffic, and routes every alarm to
//! the NOC collector. Identical scenarios give byte-identical reports.

mod report;
mod scenario;
mod serve;
mod sim;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::kms::KmsError;
use crate::telemetry::TelemetryError;

pub use report::{
    read_timeseries, write_timeseries, KmsReport, LinkReport, PairReport, RunReport, SessionReport, TimeseriesRow,
};
pub use scenario::{Fault, FaultAction, Outputs, Scenario, ScenarioError, SessionSpec, TrafficSpec, MAX_TICK_S};
pub use serve::{BoundService, ServeConfig, ServeSummary};
pub use sim::{buffer_digest, run, RunOutput};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("telemetry: {0}")]
    Telemetry(#[from] TelemetryError),
    #[error("kms: {0}")]
    Kms(#[from] KmsError),
    #[error("session {sae}: {detail}")]
    Session { sae: String, detail: String },
    #[error("time series: {0}")]
    Csv(#[from] csv::Error),
    #[error("service task failed: {0}")]
    Task(String),
}

impl RunError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        RunError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Scenario(_) => EXIT_VALIDATION,
            _ => EXIT_RUNTIME,
        }
    }
}

fn create(path: &Path) -> Result<std::fs::File, RunError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| RunError::io(dir, e))?;
    }
    std::fs::File::create(path).map_err(|e| RunError::io(path, e))
}

/// Runs `scenario` and writes the report and time series to the paths it
/// names. The NOC log is written during the run.
pub fn run_scenario(scenario: &Scenario) -> Result<RunOutput, RunError> {
    if let Some(p) = &scenario.outputs.noc_log {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| RunError::io(dir, e))?;
        }
    }
    let out = run(scenario)?;
    if let Some(p) = &scenario.outputs.report {
        use std::io::Write;
        create(p)?
            .write_all(out.report.to_json().as_bytes())
            .map_err(|e| RunError::io(p, e))?;
    }
    if let Some(p) = &scenario.outputs.timeseries {
        write_timeseries(create(p)?, &out.timeseries)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
