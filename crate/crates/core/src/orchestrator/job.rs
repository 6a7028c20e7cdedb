use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::{ClassifierSpec, DetectError, DetectorConfig};
use crate::interval::SensitiveInterval;
use crate::machine::MachineInfo;
use crate::media::{MediaError, Mode, OutputProfile};
use crate::registry::{RegistryError, VerificationReport};

/// Opaque job identifier: 32 lowercase hex digits, deliberately not in the
/// hyphenated form used for pseudonyms.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JobId(String);

impl JobId {
    pub fn generate() -> Self {
        Self(uuid::Uuid::new_v4().simple().to_string())
    }

    /// Accepts only the generated shape, so ids are safe as file names.
    pub fn parse(s: &str) -> Option<Self> {
        (s.len() == 32 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))).then(|| Self(s.into()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for JobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One patient's recording as submitted for processing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecording {
    pub patient_id: String,
    pub segment_paths: Vec<PathBuf>,
    pub mode: Mode,
    pub profile: OutputProfile,
    pub detector_cfg: DetectorConfig,
    #[serde(default)]
    pub classifier: ClassifierSpec,
}

impl CaseRecording {
    pub fn new(patient_id: impl Into<String>, segment_paths: Vec<PathBuf>, mode: Mode) -> Self {
        Self {
            patient_id: patient_id.into(),
            segment_paths,
            mode,
            profile: OutputProfile::default(),
            detector_cfg: DetectorConfig::default(),
            classifier: ClassifierSpec::Heuristic,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.patient_id.trim().is_empty() {
            return Err("patient id must not be empty".into());
        }
        if self.segment_paths.is_empty() {
            return Err("a case needs at least one segment".into());
        }
        if let Some(i) = self.segment_paths.iter().position(|p| !p.is_file()) {
            return Err(format!("segment {} does not exist", i + 1));
        }
        self.profile.validate().map_err(|e| e.to_string())?;
        self.detector_cfg.validate().map_err(|e| e.to_string())?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
    Cancelled,
}

impl JobStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, Self::Done | Self::Failed | Self::Cancelled)
    }

    /// Queued -> Running | Cancelled; Running -> Done | Failed | Cancelled.
    pub fn can_become(self, next: Self) -> bool {
        use JobStatus::*;
        matches!((self, next), (Queued, Running | Cancelled) | (Running, Done | Failed | Cancelled))
    }
}

impl fmt::Display for JobStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Queued => "queued",
            Self::Running => "running",
            Self::Done => "done",
            Self::Failed => "failed",
            Self::Cancelled => "cancelled",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Merge,
    Detect,
    Redact,
    Strip,
    Finalize,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Merge, Stage::Detect, Stage::Redact, Stage::Strip, Stage::Finalize];

    /// Share of overall job progress, as `[start, end)` percent.
    pub fn percent_range(self) -> (f64, f64) {
        match self {
            Self::Merge => (0.0, 15.0),
            Self::Detect => (15.0, 40.0),
            Self::Redact => (40.0, 88.0),
            Self::Strip => (88.0, 96.0),
            Self::Finalize => (96.0, 100.0),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Merge => "merge",
            Self::Detect => "detect",
            Self::Redact => "redact",
            Self::Strip => "strip",
            Self::Finalize => "finalize",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Validation,
    SegmentUnreadable,
    Media,
    Detection,
    Registry,
    Verification,
    OutputExists,
    IntermediateMissing,
    DiskFull,
    Interrupted,
    Cancelled,
    Internal,
}

/// Why a job stopped. Messages never carry the patient id.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{kind:?}: {message}")]
pub struct JobError {
    pub kind: FailureKind,
    pub message: String,
}

impl JobError {
    pub fn new(kind: FailureKind, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }

    pub fn cancelled() -> Self {
        Self::new(FailureKind::Cancelled, "cancelled")
    }

    pub fn interrupted() -> Self {
        Self::new(FailureKind::Interrupted, "interrupted before completion")
    }
}

impl From<MediaError> for JobError {
    fn from(e: MediaError) -> Self {
        let kind = match &e {
            MediaError::Cancelled => FailureKind::Cancelled,
            MediaError::SegmentUnreadable { .. } | MediaError::NoSegments => FailureKind::SegmentUnreadable,
            MediaError::DiskFull => FailureKind::DiskFull,
            MediaError::IntervalOutOfRange { .. } | MediaError::InvalidProfile(_) => FailureKind::Validation,
            _ => FailureKind::Media,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<DetectError> for JobError {
    fn from(e: DetectError) -> Self {
        match e {
            DetectError::Media(m) => m.into(),
            other => Self::new(FailureKind::Detection, other.to_string()),
        }
    }
}

impl From<RegistryError> for JobError {
    fn from(e: RegistryError) -> Self {
        match e {
            RegistryError::Media(m) => m.into(),
            other => Self::new(FailureKind::Registry, other.to_string()),
        }
    }
}

/// One entry of a job's ordered progress stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressEvent {
    /// Position in the job's stream, from 0.
    pub seq: u64,
    pub job_id: JobId,
    pub status: JobStatus,
    pub stage: Option<Stage>,
    pub percent: f64,
    pub message: String,
    pub at: String,
}

/// Summary of a successful job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessingReport {
    pub job_id: JobId,
    pub output_path: PathBuf,
    pub pseudonym: String,
    pub mode: Mode,
    /// Redaction set before keyframe expansion.
    pub intervals_redacted: Vec<SensitiveInterval>,
    /// Seconds actually re-encoded, after keyframe expansion.
    pub reencoded_s: f64,
    pub media_duration_s: f64,
    pub durations: BTreeMap<Stage, f64>,
    pub verification: VerificationReport,
    pub machine_info: MachineInfo,
}

/// Keep or force-redact a span of a finished job's output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverrideAction {
    Keep,
    Redact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalOverride {
    pub start_s: f64,
    pub end_s: f64,
    pub action: OverrideAction,
}

/// Re-run parameters of a job created by overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rerun {
    pub source: JobId,
    pub pseudonym: String,
    pub intervals: Vec<SensitiveInterval>,
    pub media_duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: JobId,
    /// Enqueue order across the workspace.
    pub seq: u64,
    pub case: CaseRecording,
    pub status: JobStatus,
    pub stage: Option<Stage>,
    pub percent: f64,
    pub log_path: PathBuf,
    pub created_at: String,
    pub updated_at: String,
    #[serde(default)]
    pub finished_at: Option<String>,
    /// Job whose work directory holds the merged intermediate.
    pub intermediate_of: JobId,
    #[serde(default)]
    pub rerun: Option<Rerun>,
    /// Redaction set, once known.
    #[serde(default)]
    pub intervals: Option<Vec<SensitiveInterval>>,
    #[serde(default)]
    pub report: Option<ProcessingReport>,
    #[serde(default)]
    pub error: Option<JobError>,
    #[serde(default)]
    pub events: Vec<ProgressEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("illegal transition {from} -> {to}")]
pub struct IllegalTransition {
    pub from: JobStatus,
    pub to: JobStatus,
}

impl Job {
    pub fn pseudonym(&self) -> Option<&str> {
        self.report.as_ref().map(|r| r.pseudonym.as_str()).or(self.rerun.as_ref().map(|r| r.pseudonym.as_str()))
    }

    pub(crate) fn transition(&mut self, to: JobStatus) -> Result<(), IllegalTransition> {
        if !self.status.can_become(to) {
            return Err(IllegalTransition { from: self.status, to });
        }
        self.status = to;
        Ok(())
    }
}
