//! Flat `key=value` configuration, one key per line, `#` starts a comment.
//!
//! Later assignments win, so command-line overrides are applied by calling
//! [`AppConfig::set`] after loading the file.

use std::net::IpAddr;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::detect::{ClassifierSpec, DetectorConfig};
use crate::machine::MachineInfo;
use crate::media::{Mode, OutputProfile, VideoCodec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: expected key=value")]
    Syntax { line: usize },
    #[error("unknown configuration key {0:?}")]
    UnknownKey(String),
    #[error("invalid value {value:?} for {key}: {reason}")]
    InvalidValue { key: String, value: String, reason: String },
}

/// Every recognised key with a one-line description.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("workspace", "workspace root directory"),
    ("media_tool_path", "path to the ffmpeg-compatible binary"),
    ("bind", "service bind address (loopback unless allow_non_loopback=true)"),
    ("allow_non_loopback", "permit binding a non-loopback address"),
    ("port", "service port"),
    ("workers", "background worker pool size"),
    ("default_mode", "fast or advanced"),
    ("retain_intermediate_hours", "hours the merged intermediate is kept for review"),
    ("fs_roots", "comma-separated folders the service may list"),
    ("ui_dir", "directory of static UI assets"),
    ("classifier", "heuristic or model:<path>"),
    ("sample_fps", "detector sampling rate"),
    ("smooth_window", "odd smoothing window in samples"),
    ("theta_on", "hysteresis enter threshold"),
    ("theta_off", "hysteresis exit threshold"),
    ("min_duration_s", "shortest interval kept"),
    ("pad_s", "margin added around each interval"),
    ("profile_width", "advanced-mode output width"),
    ("profile_height", "advanced-mode output height"),
    ("profile_fps", "advanced-mode output frame rate"),
    ("profile_codec", "h264 or mpeg4"),
    ("profile_quality", "encoder quality (CRF-like, lower is better)"),
    ("drop_audio", "remove audio streams from outputs"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct AppConfig {
    pub workspace: PathBuf,
    pub media_tool_path: Option<PathBuf>,
    pub bind: IpAddr,
    pub allow_non_loopback: bool,
    pub port: u16,
    pub workers: usize,
    pub default_mode: Mode,
    pub retain_intermediate_hours: u64,
    /// Empty means the workspace `input/` directory only.
    pub fs_roots: Vec<PathBuf>,
    pub ui_dir: Option<PathBuf>,
    pub classifier: ClassifierSpec,
    pub detector: DetectorConfig,
    pub profile: OutputProfile,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            workspace: PathBuf::from("vidpriv-workspace"),
            media_tool_path: None,
            bind: IpAddr::from([127, 0, 0, 1]),
            allow_non_loopback: false,
            port: 8787,
            workers: MachineInfo::detect().default_workers(),
            default_mode: Mode::Fast,
            retain_intermediate_hours: 72,
            fs_roots: Vec::new(),
            ui_dir: None,
            classifier: ClassifierSpec::Heuristic,
            detector: DetectorConfig::default(),
            profile: OutputProfile::default(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::InvalidValue {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(ConfigError::InvalidValue { key: key.into(), value: value.into(), reason: "expected true or false".into() }),
    }
}

impl AppConfig {
    /// Defaults overlaid with `path`, if it exists.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        match std::fs::read_to_string(path) {
            Ok(text) => cfg.apply_text(&text)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(source) => return Err(ConfigError::Io { path: path.into(), source }),
        }
        Ok(cfg)
    }

    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split_once('#').map_or(raw, |(l, _)| l).trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let path = || PathBuf::from(value);
        let detector = &mut self.detector;
        let profile = &mut self.profile;
        match key {
            "workspace" => self.workspace = path(),
            "media_tool_path" => self.media_tool_path = (!value.is_empty()).then(path),
            "bind" => self.bind = parse(key, value)?,
            "allow_non_loopback" => self.allow_non_loopback = parse_bool(key, value)?,
            "port" => self.port = parse(key, value)?,
            "workers" => {
                self.workers = parse(key, value)?;
                if self.workers == 0 {
                    return Err(ConfigError::InvalidValue { key: key.into(), value: value.into(), reason: "must be at least 1".into() });
                }
            }
            "default_mode" => self.default_mode = parse(key, value)?,
            "retain_intermediate_hours" => self.retain_intermediate_hours = parse(key, value)?,
            "fs_roots" => {
                self.fs_roots = value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(PathBuf::from).collect()
            }
            "ui_dir" => self.ui_dir = (!value.is_empty()).then(path),
            "classifier" => self.classifier = parse(key, value)?,
            "sample_fps" => detector.sample_fps = parse(key, value)?,
            "smooth_window" => detector.smooth_window = parse(key, value)?,
            "theta_on" => detector.theta_on = parse(key, value)?,
            "theta_off" => detector.theta_off = parse(key, value)?,
            "min_duration_s" => detector.min_duration_s = parse(key, value)?,
            "pad_s" => detector.pad_s = parse(key, value)?,
            "profile_width" => profile.width = parse(key, value)?,
            "profile_height" => profile.height = parse(key, value)?,
            "profile_fps" => profile.fps = parse(key, value)?,
            "profile_codec" => profile.video_codec = parse::<VideoCodec>(key, value)?,
            "profile_quality" => profile.quality = parse(key, value)?,
            "drop_audio" => profile.drop_audio = parse_bool(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Check cross-field constraints that single assignments cannot.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key: &str, reason: String| ConfigError::InvalidValue { key: key.into(), value: String::new(), reason };
        self.detector.validate().map_err(|e| invalid("detector", e.to_string()))?;
        self.profile.validate().map_err(|e| invalid("profile", e.to_string()))?;
        if !self.bind.is_loopback() && !self.allow_non_loopback {
            return Err(invalid("bind", format!("{} is not loopback; set allow_non_loopback=true to permit it", self.bind)));
        }
        Ok(())
    }

    /// Render as a config file that parses back to `self`.
    pub fn render(&self) -> String {
        let opt = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let roots: Vec<String> = self.fs_roots.iter().map(|p| p.display().to_string()).collect();
        let d = &self.detector;
        let p = &self.profile;
        let values = [
            self.workspace.display().to_string(),
            opt(&self.media_tool_path),
            self.bind.to_string(),
            self.allow_non_loopback.to_string(),
            self.port.to_string(),
            self.workers.to_string(),
            self.default_mode.to_string(),
            self.retain_intermediate_hours.to_string(),
            roots.join(","),
            opt(&self.ui_dir),
            self.classifier.to_string(),
            d.sample_fps.to_string(),
            d.smooth_window.to_string(),
            d.theta_on.to_string(),
            d.theta_off.to_string(),
            d.min_duration_s.to_string(),
            d.pad_s.to_string(),
            p.width.to_string(),
            p.height.to_string(),
            p.fps.to_string(),
            p.video_codec.probe_name().to_string(),
            p.quality.to_string(),
            p.drop_audio.to_string(),
        ];
        CONFIG_KEYS
            .iter()
            .zip(values)
            .map(|((k, doc), v)| format!("# {doc}\n{k}={v}\n"))
            .collect()
    }
}
