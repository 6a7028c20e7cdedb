//! Everything that touches video files: probing, merging, redaction plans and
//! their execution, metadata stripping, and raw frame access.
//!
//! All work is delegated to the external media tool (see [`crate::tool`]).
//! Outputs are always written to a temporary path beside the destination and
//! renamed into place once complete.

mod exec;
mod frames;
mod merge;
mod plan;
mod probe;
mod segments;
mod strip;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cancel::CancelToken;
use crate::progress::ProgressSink;
use crate::tool::CommandLog;

pub use exec::{execute_plan, redact_filter};
pub use frames::{extract_frame_png, read_frames, FrameReader, RgbFrame, Sampling};
pub use merge::merge_segments;
pub use plan::{plan_fast_cuts, ActionKind, PlanAction, ProcessingPlan};
pub use probe::{parse_banner, parse_framecrc, probe, BannerInfo};
pub use segments::{discover_segments, is_video_file, natural_cmp, VIDEO_EXTENSIONS};
pub use strip::{is_technical_tag, non_allowlisted_tags, strip_metadata};

#[derive(Debug, Error)]
pub enum MediaError {
    #[error("not a decodable video: {0}")]
    NotAVideo(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("segment {index} is unreadable")]
    SegmentUnreadable { index: usize },
    #[error("no input segments")]
    NoSegments,
    #[error("media tool failed: {0}")]
    ToolFailure(String),
    #[error("media tool unavailable: {0}")]
    ToolMissing(String),
    #[error("disk full")]
    DiskFull,
    #[error("cancelled")]
    Cancelled,
    #[error("interval [{start_s}, {end_s}) outside [0, {duration_s}]")]
    IntervalOutOfRange { start_s: f64, end_s: f64, duration_s: f64 },
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("invalid output profile: {0}")]
    InvalidProfile(String),
    #[error("fast mode cannot re-encode {0} streams in place")]
    UnsupportedCodec(String),
}

impl MediaError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        if source.raw_os_error() == Some(28) {
            return MediaError::DiskFull;
        }
        MediaError::Io { path: path.to_path_buf(), source }
    }
}

/// Processing mode of a case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Stream-copy untouched spans, re-encode only around sensitive spans.
    #[default]
    Fast,
    /// Re-encode the whole timeline to the requested profile.
    Advanced,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fast" => Ok(Mode::Fast),
            "advanced" => Ok(Mode::Advanced),
            other => Err(format!("unknown mode {other:?} (expected fast|advanced)")),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Fast => "fast",
            Mode::Advanced => "advanced",
        })
    }
}

/// Output video codec.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum VideoCodec {
    #[default]
    H264,
    Mpeg4,
}

impl VideoCodec {
    /// Codec name as reported by the probe.
    pub fn probe_name(self) -> &'static str {
        match self {
            VideoCodec::H264 => "h264",
            VideoCodec::Mpeg4 => "mpeg4",
        }
    }

    pub fn from_probe_name(name: &str) -> Option<Self> {
        match name {
            "h264" => Some(VideoCodec::H264),
            "mpeg4" => Some(VideoCodec::Mpeg4),
            _ => None,
        }
    }

    /// Encoder arguments for a quality factor (CRF for H.264, qscale for MPEG-4).
    pub(crate) fn encoder_args(self, quality: u32) -> Vec<String> {
        match self {
            VideoCodec::H264 => vec![
                "-c:v".into(),
                "libx264".into(),
                "-preset".into(),
                "veryfast".into(),
                "-crf".into(),
                quality.min(51).to_string(),
            ],
            VideoCodec::Mpeg4 => vec![
                "-c:v".into(),
                "mpeg4".into(),
                "-q:v".into(),
                (quality / 2).clamp(2, 31).to_string(),
            ],
        }
    }
}

impl std::str::FromStr for VideoCodec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        VideoCodec::from_probe_name(&s.to_ascii_lowercase())
            .ok_or_else(|| format!("unsupported codec {s:?} (expected h264|mpeg4)"))
    }
}

/// Probe-side view of a video file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediaInfo {
    pub duration_s: f64,
    pub fps: f64,
    pub width: u32,
    pub height: u32,
    pub video_codec: String,
    pub pix_fmt: Option<String>,
    /// Stream time base denominator (`tbn`), used to keep re-encoded parts concatenable.
    pub timescale: Option<u32>,
    pub has_audio: bool,
    /// Container and per-stream metadata merged into one map.
    pub tags: std::collections::BTreeMap<String, String>,
    pub keyframe_times_s: Vec<f64>,
}

impl MediaInfo {
    pub fn frame_period(&self) -> f64 {
        1.0 / self.fps
    }
}

/// Target stream parameters for re-encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputProfile {
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    pub video_codec: VideoCodec,
    pub quality: u32,
    #[serde(default = "default_true")]
    pub drop_audio: bool,
}

fn default_true() -> bool {
    true
}

impl Default for OutputProfile {
    fn default() -> Self {
        Self { width: 1280, height: 720, fps: 25.0, video_codec: VideoCodec::H264, quality: 23, drop_audio: true }
    }
}

/// Quality used for spans re-encoded in fast mode, so untouched frames stay close to the source.
pub const FAST_SPAN_QUALITY: u32 = 18;

impl OutputProfile {
    pub fn validate(&self) -> Result<(), MediaError> {
        if self.width < 2 || self.height < 2 || self.width % 2 != 0 || self.height % 2 != 0 {
            return Err(MediaError::InvalidProfile(format!(
                "{}x{}: dimensions must be even and at least 2",
                self.width, self.height
            )));
        }
        if !(self.fps > 1.0 && self.fps <= 240.0) {
            return Err(MediaError::InvalidProfile(format!("fps {} outside (1, 240]", self.fps)));
        }
        Ok(())
    }

    /// Profile that keeps a source's own geometry and frame rate.
    pub fn native(info: &MediaInfo) -> Self {
        let even = |v: u32| (v.max(2) / 2) * 2;
        Self {
            width: even(info.width),
            height: even(info.height),
            fps: info.fps.clamp(1.000_001, 240.0),
            video_codec: VideoCodec::from_probe_name(&info.video_codec).unwrap_or_default(),
            quality: FAST_SPAN_QUALITY,
            drop_audio: true,
        }
    }

    pub fn with_drop_audio(mut self, drop_audio: bool) -> Self {
        self.drop_audio = drop_audio;
        self
    }

    /// Whether a probed stream already satisfies this profile.
    pub fn matches(&self, info: &MediaInfo) -> bool {
        info.width == self.width
            && info.height == self.height
            && (info.fps - self.fps).abs() < 0.01
            && info.video_codec == self.video_codec.probe_name()
            && info.pix_fmt.as_deref().is_none_or(|p| p == "yuv420p")
    }
}

/// Shared knobs for long-running media operations.
#[derive(Clone, Copy, Default)]
pub struct ExecContext<'a> {
    pub cancel: Option<&'a CancelToken>,
    pub log: Option<&'a dyn CommandLog>,
    pub progress: Option<&'a dyn ProgressSink>,
}

impl<'a> ExecContext<'a> {
    pub fn with_cancel(mut self, cancel: &'a CancelToken) -> Self {
        self.cancel = Some(cancel);
        self
    }

    pub fn with_log(mut self, log: &'a dyn CommandLog) -> Self {
        self.log = Some(log);
        self
    }

    pub fn with_progress(mut self, progress: &'a dyn ProgressSink) -> Self {
        self.progress = Some(progress);
        self
    }

    pub(crate) fn report(&self, percent: f64) {
        if let Some(p) = self.progress {
            p.report(percent);
        }
    }

    pub(crate) fn check_cancel(&self) -> Result<(), MediaError> {
        if self.cancel.is_some_and(CancelToken::is_cancelled) {
            Err(MediaError::Cancelled)
        } else {
            Ok(())
        }
    }
}

/// Temporary sibling path of `dest` carrying the reserved suffix. The original
/// extension is kept last so the tool still infers the container.
pub fn temp_sibling(dest: &Path) -> PathBuf {
    let name = dest.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let (stem, ext) = match name.rfind('.') {
        Some(i) => (&name[..i], &name[i..]),
        None => (name.as_str(), ""),
    };
    dest.with_file_name(format!("{stem}{}{ext}", crate::RESERVED_SUFFIX))
}

/// Removes a temporary file or directory unless disarmed.
pub(crate) struct TempGuard {
    path: PathBuf,
    armed: bool,
}

impl TempGuard {
    pub(crate) fn new(path: PathBuf) -> Self {
        Self { path, armed: true }
    }

    pub(crate) fn path(&self) -> &Path {
        &self.path
    }

    /// Atomically move the temporary file into place.
    pub(crate) fn commit(mut self, dest: &Path) -> Result<(), MediaError> {
        std::fs::rename(&self.path, dest).map_err(|e| MediaError::io(dest, e))?;
        self.armed = false;
        Ok(())
    }
}

impl Drop for TempGuard {
    fn drop(&mut self) {
        if self.armed {
            if self.path.is_dir() {
                let _ = std::fs::remove_dir_all(&self.path);
            } else {
                let _ = std::fs::remove_file(&self.path);
            }
        }
    }
}
