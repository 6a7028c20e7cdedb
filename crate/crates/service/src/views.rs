//! Response bodies. They are built from jobs field by field so that case
//! inputs (patient id, segment paths) never reach a client.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use vidpriv_core::orchestrator::{FailureKind, IntervalOverride, ProgressEvent};
use vidpriv_core::{Job, JobId, JobStatus, Mode, OutputProfile, SensitiveInterval, Stage, VerificationReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobSummary {
    pub id: JobId,
    pub status: JobStatus,
    pub stage: Option<Stage>,
    pub percent: f64,
    pub mode: Mode,
    /// Known once the job has published its output.
    pub pseudonym: Option<String>,
    pub rerun_of: Option<JobId>,
    pub created_at: String,
    pub updated_at: String,
    pub finished_at: Option<String>,
    pub error: Option<ErrorView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorView {
    pub kind: FailureKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportView {
    pub output_file: String,
    pub reencoded_s: f64,
    pub media_duration_s: f64,
    pub verification: VerificationReport,
    pub stage_durations_s: Vec<(Stage, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobDetail {
    #[serde(flatten)]
    pub summary: JobSummary,
    pub segment_count: usize,
    pub intervals: Option<Vec<SensitiveInterval>>,
    pub report: Option<ReportView>,
    pub events: Vec<EventView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventView {
    pub seq: u64,
    pub job_id: JobId,
    pub status: JobStatus,
    pub stage: Option<Stage>,
    pub percent: f64,
    pub message: String,
    pub at: String,
}

impl From<&ProgressEvent> for EventView {
    fn from(e: &ProgressEvent) -> Self {
        Self {
            seq: e.seq,
            job_id: e.job_id.clone(),
            status: e.status,
            stage: e.stage,
            percent: e.percent,
            message: e.message.clone(),
            at: e.at.clone(),
        }
    }
}

impl From<&Job> for JobSummary {
    fn from(j: &Job) -> Self {
        Self {
            id: j.id.clone(),
            status: j.status,
            stage: j.stage,
            percent: j.percent,
            mode: j.case.mode,
            pseudonym: j.report.as_ref().map(|r| r.pseudonym.clone()).or_else(|| j.rerun.as_ref().map(|r| r.pseudonym.clone())),
            rerun_of: j.rerun.as_ref().map(|r| r.source.clone()),
            created_at: j.created_at.clone(),
            updated_at: j.updated_at.clone(),
            finished_at: j.finished_at.clone(),
            error: j.error.as_ref().map(|e| ErrorView { kind: e.kind, message: e.message.clone() }),
        }
    }
}

impl From<&Job> for JobDetail {
    fn from(j: &Job) -> Self {
        Self {
            summary: j.into(),
            segment_count: j.case.segment_paths.len(),
            intervals: j.intervals.clone(),
            report: j.report.as_ref().map(|r| ReportView {
                output_file: r.output_path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
                reencoded_s: r.reencoded_s,
                media_duration_s: r.media_duration_s,
                verification: r.verification.clone(),
                stage_durations_s: r.durations.iter().map(|(s, d)| (*s, *d)).collect(),
            }),
            events: j.events.iter().map(EventView::from).collect(),
        }
    }
}

/// Body of `POST /cases`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRequest {
    pub patient_id: String,
    pub folder: PathBuf,
    #[serde(default)]
    pub mode: Option<Mode>,
    #[serde(default)]
    pub profile: Option<ProfileOverrides>,
}

/// Fields of the configured output profile a case may override.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileOverrides {
    pub width: Option<u32>,
    pub height: Option<u32>,
    pub fps: Option<f64>,
    pub video_codec: Option<vidpriv_core::media::VideoCodec>,
    pub quality: Option<u32>,
    pub drop_audio: Option<bool>,
}

impl ProfileOverrides {
    pub fn apply(&self, mut p: OutputProfile) -> OutputProfile {
        p.width = self.width.unwrap_or(p.width);
        p.height = self.height.unwrap_or(p.height);
        p.fps = self.fps.unwrap_or(p.fps);
        p.video_codec = self.video_codec.unwrap_or(p.video_codec);
        p.quality = self.quality.unwrap_or(p.quality);
        p.drop_audio = self.drop_audio.unwrap_or(p.drop_audio);
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accepted {
    pub job_id: JobId,
    pub status: JobStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseAccepted {
    pub job_id: JobId,
    pub status: JobStatus,
    pub segment_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalsView {
    pub job_id: JobId,
    pub duration_s: f64,
    pub intervals: Vec<SensitiveInterval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverridesRequest {
    pub overrides: Vec<IntervalOverride>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FsEntry {
    pub name: String,
    pub path: PathBuf,
    pub is_dir: bool,
    /// Recognised video files directly inside a directory.
    pub video_count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FsListing {
    /// `None` when listing the roots themselves.
    pub path: Option<PathBuf>,
    pub parent: Option<PathBuf>,
    pub entries: Vec<FsEntry>,
}
