//! Local de-identification pipeline for segmented endoscopic recordings.
//!
//! The crate is organised around the stages a case goes through:
//!
//! - [`media`]: probing, merging, selective or full re-encoding with redaction,
//!   and metadata stripping, all by driving an FFmpeg-compatible binary.
//! - [`detect`]: per-frame out-of-body scoring, temporal smoothing and
//!   hysteresis interval extraction.
//! - [`registry`]: the local patient-id to UUID ledger and output verification.
//! - [`orchestrator`]: background jobs that run the whole chain with progress
//!   events, persistence and crash recovery.
//! - [`synth`]: deterministic synthetic recordings with known ground truth.

pub mod cancel;
pub mod config;
pub mod detect;
pub mod interval;
pub mod machine;
pub mod media;
pub mod orchestrator;
pub mod progress;
pub mod registry;
pub mod synth;
pub mod tool;
pub mod workspace;

pub use cancel::CancelToken;
pub use config::{AppConfig, ConfigError};
pub use detect::{DetectorConfig, FramePrediction};
pub use interval::{IntervalSource, SensitiveInterval};
pub use media::{MediaError, MediaInfo, Mode, OutputProfile, ProcessingPlan};
pub use orchestrator::{
    CaseRecording, Job, JobId, JobStatus, Orchestrator, ProcessingReport, ProgressEvent, Stage,
};
pub use registry::{PseudonymRecord, Registry, RegistryError, VerificationReport};
pub use tool::MediaTool;
pub use workspace::Workspace;

/// Suffix carried by every temporary file or directory the pipeline writes.
/// Anything carrying it is garbage after a crash and removed by the startup sweep.
pub const RESERVED_SUFFIX: &str = ".vidpriv-tmp";
