//! Timing harness comparing Fast and Advanced processing.
//!
//! [`run_benchmark`] times whole cases through the production pipeline on
//! synthetic recordings, strictly one at a time. [`compute_gmr`] and
//! [`bootstrap_ci`] summarise the Advanced/Fast ratio per video and overall,
//! and [`emit_report`] renders the records as markdown and CSV tables.

mod record;
mod report;
mod run;
mod stats;

use std::path::PathBuf;

use thiserror::Error;
use vidpriv_core::{MediaError, Mode};

pub use record::{append_records, parse_video_duration, read_records, video_label, write_records, BenchRecord, RECORD_HEADER};
pub use report::{emit_report, write_report, BenchReport, SUMMARY_HEADER};
pub use run::{run_benchmark, BenchConfig, BenchRun, FailedRep, DESK_DURATIONS_S, FULL_DURATIONS_S};
pub use stats::{
    bootstrap_ci, compute_gmr, compute_stats, geometric_mean, BenchStats, BootstrapCi, CiUnit, GmrSummary, MachineRatio,
    VideoGmr, DEFAULT_RESAMPLES, DEFAULT_SEED,
};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("no {missing} timings for video {video} on machine {machine}")]
    MissingPair { machine: String, video: String, missing: Mode },
    #[error("need at least {needed} values, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("need at least {needed} bootstrap resamples, got {got}")]
    TooFewResamples { needed: usize, got: usize },
    #[error("no benchmark records")]
    Empty,
    #[error("invalid benchmark configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Media(#[from] MediaError),
    #[error("orchestrator: {0}")]
    Orchestrator(String),
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> BenchError {
    let path = path.into();
    move |source| BenchError::Io { path, source }
}
