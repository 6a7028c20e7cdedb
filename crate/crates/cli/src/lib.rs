//! The `vidpriv` command line.
//!
//! Every subcommand loads the flat `key=value` configuration first and then
//! applies command-line overrides on top, so a flag always beats the file.

mod commands;

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;
use vidpriv_core::{AppConfig, ConfigError, MediaError, Mode, OutputProfile};

pub use commands::run;

pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_PIPELINE: u8 = 3;
pub const EXIT_VERIFICATION: u8 = 4;

/// Picked up from the working directory when `--config` is not given.
pub const DEFAULT_CONFIG_FILE: &str = "vidpriv.conf";

#[derive(Debug, Parser)]
#[command(name = "vidpriv", version, about = "Local de-identification of segmented endoscopic recordings")]
pub struct Cli {
    /// Configuration file (flat key=value, `#` comments). Defaults to ./vidpriv.conf when present.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Workspace root; overrides `workspace` from the configuration.
    #[arg(long, global = true, value_name = "DIR")]
    pub workspace: Option<PathBuf>,
    /// FFmpeg-compatible binary; overrides `media_tool_path`.
    #[arg(long, global = true, value_name = "PATH")]
    pub media_tool: Option<PathBuf>,
    /// Override any configuration key. Repeatable; applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one case synchronously and print the de-identified output path.
    Process(ProcessArgs),
    /// Run the loopback HTTP service until interrupted.
    Serve(ServeArgs),
    /// Check a file for residual identifiers; exit 0 iff it passes.
    Verify(VerifyArgs),
    /// Time Fast against Advanced mode on synthetic videos and write a report.
    Bench(BenchArgs),
    /// Print the effective configuration as a config file.
    Config,
}

#[derive(Debug, Args)]
pub struct ProcessArgs {
    /// Patient identifier; recorded only in the local registry.
    #[arg(long, value_name = "ID")]
    pub patient: String,
    /// Folder holding the case's video segments.
    #[arg(long, value_name = "DIR")]
    pub input: PathBuf,
    /// Processing mode; defaults to `default_mode` (fast unless configured).
    #[arg(long, value_name = "fast|advanced")]
    pub mode: Option<Mode>,
    /// Output geometry for Advanced mode, as WIDTHxHEIGHT or WIDTHxHEIGHT@FPS.
    #[arg(long, value_name = "WxH[@FPS]")]
    pub profile: Option<ProfileArg>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Port to listen on (0 picks a free one); overrides `port`.
    #[arg(long, value_name = "N")]
    pub port: Option<u16>,
    /// Background worker pool size; overrides `workers`.
    #[arg(long, value_name = "N")]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Output file to check against the workspace registry.
    #[arg(value_name = "FILE")]
    pub file: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Use the long durations (1, 30 and 60 minutes) instead of the desk-scale ones.
    #[arg(long)]
    pub full: bool,
    /// Repetitions per mode and video.
    #[arg(long, value_name = "N")]
    pub reps: Option<u32>,
    /// Comma-separated video durations in seconds; overrides the preset.
    #[arg(long, value_name = "S,S,...", value_delimiter = ',')]
    pub durations: Option<Vec<f64>>,
    /// Seed for synthetic content.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Directory for bench.csv and the reports; defaults to <workspace>/bench.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Regenerate the report from an existing record file without timing anything.
    #[arg(long, value_name = "FILE")]
    pub from_csv: Option<PathBuf>,
}

/// `WIDTHxHEIGHT[@FPS]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileArg {
    pub width: u32,
    pub height: u32,
    pub fps: Option<f64>,
}

impl FromStr for ProfileArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("expected WIDTHxHEIGHT or WIDTHxHEIGHT@FPS, got {s:?}");
        let (geometry, fps) = match s.split_once('@') {
            Some((g, f)) => (g, Some(f.parse::<f64>().map_err(|_| bad())?)),
            None => (s, None),
        };
        let (w, h) = geometry.split_once(['x', 'X']).ok_or_else(bad)?;
        Ok(Self { width: w.parse().map_err(|_| bad())?, height: h.parse().map_err(|_| bad())?, fps })
    }
}

impl ProfileArg {
    pub fn apply(self, mut p: OutputProfile) -> OutputProfile {
        p.width = self.width;
        p.height = self.height;
        p.fps = self.fps.unwrap_or(p.fps);
        p
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Media(#[from] MediaError),
    #[error("{0}")]
    Pipeline(String),
    #[error("{0}")]
    Verification(String),
    #[error(transparent)]
    Service(#[from] vidpriv_service::ServiceError),
    #[error(transparent)]
    Bench(#[from] vidpriv_bench::BenchError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use vidpriv_service::ServiceError;
        match self {
            CliError::Config(_) | CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Service(ServiceError::NonLoopback(_) | ServiceError::Bind { .. }) => EXIT_VALIDATION,
            CliError::Bench(vidpriv_bench::BenchError::Config(_)) => EXIT_VALIDATION,
            CliError::Verification(_) => EXIT_VERIFICATION,
            _ => EXIT_PIPELINE,
        }
    }
}

/// File values, then `--workspace`, `--media-tool` and every `--set`, in order.
pub fn load_config(cli: &Cli) -> Result<AppConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) if !path.is_file() => {
            return Err(CliError::Validation(format!("config file {} does not exist", absolute(path).display())));
        }
        Some(path) => AppConfig::load(path)?,
        None => AppConfig::load(Path::new(DEFAULT_CONFIG_FILE))?,
    };
    if let Some(ws) = &cli.workspace {
        cfg.workspace = ws.clone();
    }
    if let Some(tool) = &cli.media_tool {
        cfg.media_tool_path = Some(tool.clone());
    }
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Validation(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Best-effort absolute form for printing.
pub fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}
