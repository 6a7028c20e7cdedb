//! Discovery and invocation of the external FFmpeg-compatible binary.
//!
//! Every invocation goes through [`ToolCommand`], which logs the verbatim
//! command line, honours a [`CancelToken`] by killing the child, and can
//! translate the tool's `-progress` output into fractional progress.

use std::collections::BTreeSet;
use std::ffi::{OsStr, OsString};
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, ChildStdout, Command, ExitStatus, Stdio};
use std::sync::{Arc, OnceLock};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crate::cancel::CancelToken;
use crate::media::MediaError;

/// Environment variable that overrides the configured `media_tool_path`.
pub const MEDIA_TOOL_ENV: &str = "VIDPRIV_MEDIA_TOOL";

const STDERR_EXCERPT: usize = 1200;

/// Sink for the verbatim command lines of every tool invocation.
pub trait CommandLog: Sync {
    fn command(&self, line: &str);
}

/// Handle on the media tool binary.
#[derive(Debug, Clone)]
pub struct MediaTool {
    path: PathBuf,
    filters: Arc<OnceLock<BTreeSet<String>>>,
}

impl MediaTool {
    pub fn at(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into(), filters: Arc::new(OnceLock::new()) }
    }

    /// Resolution order: `VIDPRIV_MEDIA_TOOL`, the configured path, `ffmpeg` on
    /// `PATH`, then the binary bundled with the `imageio-ffmpeg` Python package.
    pub fn discover(configured: Option<&Path>) -> Result<Self, MediaError> {
        if let Some(env) = std::env::var_os(MEDIA_TOOL_ENV).filter(|v| !v.is_empty()) {
            return Self::verified(PathBuf::from(env));
        }
        if let Some(path) = configured {
            return Self::verified(path.to_path_buf());
        }
        if let Some(found) = search_path("ffmpeg") {
            if let Ok(tool) = Self::verified(found) {
                return Ok(tool);
            }
        }
        if let Some(bundled) = imageio_ffmpeg() {
            return Self::verified(bundled);
        }
        Err(MediaError::ToolMissing(
            "no media tool found; set media_tool_path or VIDPRIV_MEDIA_TOOL".into(),
        ))
    }

    fn verified(path: PathBuf) -> Result<Self, MediaError> {
        let ok = Command::new(&path)
            .args(["-hide_banner", "-version"])
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status()
            .map(|s| s.success())
            .unwrap_or(false);
        if ok {
            Ok(Self::at(path))
        } else {
            Err(MediaError::ToolMissing(format!("{} is not runnable", path.display())))
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn command(&self) -> ToolCommand<'_> {
        ToolCommand {
            tool: self,
            args: vec!["-hide_banner".into(), "-nostdin".into()],
            cancel: None,
            log: None,
            progress: None,
            allow_failure: false,
        }
    }

    /// Whether the binary was built with the named filter; the list is read once.
    pub fn has_filter(&self, name: &str) -> bool {
        self.filters
            .get_or_init(|| {
                let out = Command::new(&self.path)
                    .args(["-hide_banner", "-filters"])
                    .stdin(Stdio::null())
                    .stderr(Stdio::null())
                    .output();
                let Ok(out) = out else { return BTreeSet::new() };
                String::from_utf8_lossy(&out.stdout)
                    .lines()
                    .filter_map(|l| l.split_whitespace().nth(1).map(str::to_string))
                    .collect()
            })
            .contains(name)
    }
}

fn search_path(name: &str) -> Option<PathBuf> {
    let paths = std::env::var_os("PATH")?;
    std::env::split_paths(&paths).map(|d| d.join(name)).find(|p| p.is_file())
}

fn imageio_ffmpeg() -> Option<PathBuf> {
    let out = Command::new("python3")
        .args(["-c", "import imageio_ffmpeg; print(imageio_ffmpeg.get_ffmpeg_exe())"])
        .stdin(Stdio::null())
        .stderr(Stdio::null())
        .output()
        .ok()?;
    if !out.status.success() {
        return None;
    }
    let path = PathBuf::from(String::from_utf8_lossy(&out.stdout).trim());
    path.is_file().then_some(path)
}

/// Captured result of a completed invocation.
#[derive(Debug)]
pub struct ToolOutput {
    pub status: ExitStatus,
    pub stdout: Vec<u8>,
    pub stderr: String,
}

type ProgressFn<'a> = &'a (dyn Fn(f64) + Sync);

/// Builder for a single invocation of the media tool.
pub struct ToolCommand<'a> {
    tool: &'a MediaTool,
    args: Vec<OsString>,
    cancel: Option<&'a CancelToken>,
    log: Option<&'a dyn CommandLog>,
    progress: Option<(f64, ProgressFn<'a>)>,
    allow_failure: bool,
}

impl<'a> ToolCommand<'a> {
    pub fn arg(mut self, arg: impl AsRef<OsStr>) -> Self {
        self.args.push(arg.as_ref().to_os_string());
        self
    }

    pub fn args<I, S>(mut self, args: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<OsStr>,
    {
        self.args.extend(args.into_iter().map(|a| a.as_ref().to_os_string()));
        self
    }

    pub fn cancel(mut self, token: Option<&'a CancelToken>) -> Self {
        self.cancel = token;
        self
    }

    pub fn log(mut self, log: Option<&'a dyn CommandLog>) -> Self {
        self.log = log;
        self
    }

    /// Report fractional completion in `[0, 1]` given the expected output duration.
    pub fn progress(mut self, expected_s: f64, f: ProgressFn<'a>) -> Self {
        if expected_s > 0.0 {
            self.progress = Some((expected_s, f));
        }
        self
    }

    /// Return the output even when the exit status is non-zero.
    pub fn allow_failure(mut self) -> Self {
        self.allow_failure = true;
        self
    }

    /// Shell-style rendering of the command line, for logs.
    pub fn command_line(&self) -> String {
        std::iter::once(self.tool.path.as_os_str())
            .chain(self.args.iter().map(OsString::as_os_str))
            .map(|a| shell_quote(&a.to_string_lossy()))
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn build(&self) -> Command {
        let mut cmd = Command::new(&self.tool.path);
        cmd.args(&self.args).stdin(Stdio::null());
        cmd
    }

    /// Run to completion, capturing stdout (unless used for progress) and stderr.
    pub fn run(mut self) -> Result<ToolOutput, MediaError> {
        if self.progress.is_some() {
            // -progress must precede the output file, so it goes right after the globals.
            self.args.splice(2..2, ["-progress".into(), "pipe:1".into(), "-nostats".into()]);
        }
        if let Some(log) = self.log {
            log.command(&self.command_line());
        }
        let mut child = self
            .build()
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| MediaError::ToolMissing(format!("{}: {e}", self.tool.path.display())))?;
        let stderr_pipe = child.stderr.take().expect("piped stderr");
        let stdout_pipe = child.stdout.take().expect("piped stdout");
        let progress = self.progress;
        let (status, stdout, stderr) = thread::scope(|scope| {
            let stderr = scope.spawn(move || read_all(stderr_pipe));
            let stdout = scope.spawn(move || match progress {
                Some((expected, f)) => {
                    for line in BufReader::new(stdout_pipe).lines().map_while(Result::ok) {
                        if let Some(us) = line.strip_prefix("out_time_us=") {
                            if let Ok(us) = us.trim().parse::<f64>() {
                                f((us / 1e6 / expected).clamp(0.0, 1.0));
                            }
                        }
                    }
                    Vec::new()
                }
                None => read_all(stdout_pipe),
            });
            let status = wait_with_cancel(&mut child, self.cancel);
            (status, stdout.join().unwrap_or_default(), stderr.join().unwrap_or_default())
        });
        let stderr = String::from_utf8_lossy(&stderr).into_owned();
        let status = status?;
        if !status.success() && !self.allow_failure {
            return Err(classify_failure(&stderr));
        }
        Ok(ToolOutput { status, stdout, stderr })
    }

    /// Run to completion while `feed` writes the tool's stdin; stdin is closed when `feed` returns.
    pub fn run_with_stdin<F>(self, feed: F) -> Result<ToolOutput, MediaError>
    where
        F: FnOnce(&mut ChildStdin) -> std::io::Result<()> + Send,
    {
        if let Some(log) = self.log {
            log.command(&self.command_line());
        }
        let mut child = self
            .build()
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| MediaError::ToolMissing(format!("{}: {e}", self.tool.path.display())))?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let stderr_pipe = child.stderr.take().expect("piped stderr");
        let stdout_pipe = child.stdout.take().expect("piped stdout");
        let (fed, status, stdout, stderr) = thread::scope(|scope| {
            let stderr = scope.spawn(move || read_all(stderr_pipe));
            let stdout = scope.spawn(move || read_all(stdout_pipe));
            let fed = scope.spawn(move || feed(&mut stdin));
            let fed = fed.join().unwrap_or_else(|_| Err(std::io::Error::other("stdin writer panicked")));
            let status = wait_with_cancel(&mut child, self.cancel);
            (fed, status, stdout.join().unwrap_or_default(), stderr.join().unwrap_or_default())
        });
        let stderr = String::from_utf8_lossy(&stderr).into_owned();
        let status = status?;
        if !status.success() && !self.allow_failure {
            return Err(classify_failure(&stderr));
        }
        fed.map_err(|e| MediaError::Io { path: PathBuf::new(), source: e })?;
        Ok(ToolOutput { status, stdout, stderr })
    }

    /// Start the tool with stdout piped to the caller; stderr is collected in the background.
    pub fn spawn_stdout(self) -> Result<ToolStream, MediaError> {
        if let Some(log) = self.log {
            log.command(&self.command_line());
        }
        let mut child = self
            .build()
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| MediaError::ToolMissing(format!("{}: {e}", self.tool.path.display())))?;
        let stderr = spawn_reader(child.stderr.take().expect("piped stderr"));
        let stdout = child.stdout.take();
        Ok(ToolStream { child, stdout, stderr: Some(stderr) })
    }
}

fn read_all<R: Read>(mut r: R) -> Vec<u8> {
    let mut buf = Vec::new();
    let _ = r.read_to_end(&mut buf);
    buf
}

fn spawn_reader<R: Read + Send + 'static>(r: R) -> JoinHandle<Vec<u8>> {
    thread::spawn(move || read_all(r))
}

fn wait_with_cancel(child: &mut Child, cancel: Option<&CancelToken>) -> Result<ExitStatus, MediaError> {
    loop {
        match child.try_wait() {
            Ok(Some(status)) => return Ok(status),
            Ok(None) => {}
            Err(e) => return Err(MediaError::Io { path: PathBuf::new(), source: e }),
        }
        if cancel.is_some_and(CancelToken::is_cancelled) {
            let _ = child.kill();
            let _ = child.wait();
            return Err(MediaError::Cancelled);
        }
        thread::sleep(Duration::from_millis(15));
    }
}

pub(crate) fn classify_failure(stderr: &str) -> MediaError {
    if stderr.contains("No space left on device") {
        return MediaError::DiskFull;
    }
    MediaError::ToolFailure(excerpt(stderr))
}

fn excerpt(stderr: &str) -> String {
    let trimmed = stderr.trim();
    if trimmed.len() <= STDERR_EXCERPT {
        return trimmed.to_string();
    }
    let mut start = trimmed.len() - STDERR_EXCERPT;
    while !trimmed.is_char_boundary(start) {
        start += 1;
    }
    format!("…{}", &trimmed[start..])
}

fn shell_quote(s: &str) -> String {
    if !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || "-_./:=,+@%".contains(c)) {
        s.to_string()
    } else {
        format!("'{}'", s.replace('\'', r"'\''"))
    }
}

/// A running invocation whose stdout is consumed by the caller.
/// Dropping it kills the child.
pub struct ToolStream {
    child: Child,
    stdout: Option<ChildStdout>,
    stderr: Option<JoinHandle<Vec<u8>>>,
}

impl ToolStream {
    pub fn stdout(&mut self) -> &mut ChildStdout {
        self.stdout.as_mut().expect("stdout already taken")
    }

    /// Wait for exit and surface a failure status as [`MediaError::ToolFailure`].
    pub fn finish(mut self) -> Result<(), MediaError> {
        drop(self.stdout.take());
        let status = self
            .child
            .wait()
            .map_err(|e| MediaError::Io { path: PathBuf::new(), source: e })?;
        let stderr = self.stderr.take().and_then(|h| h.join().ok()).unwrap_or_default();
        if status.success() {
            Ok(())
        } else {
            Err(classify_failure(&String::from_utf8_lossy(&stderr)))
        }
    }

    pub fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for ToolStream {
    fn drop(&mut self) {
        if let Ok(None) = self.child.try_wait() {
            self.kill();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quoting_keeps_plain_args_and_wraps_others() {
        assert_eq!(shell_quote("-i"), "-i");
        assert_eq!(shell_quote("/tmp/a b.mp4"), "'/tmp/a b.mp4'");
        assert_eq!(shell_quote("it's"), r"'it'\''s'");
        assert_eq!(shell_quote(""), "''");
    }

    #[test]
    fn disk_full_is_recognised() {
        assert!(matches!(classify_failure("av_interleaved_write_frame(): No space left on device"), MediaError::DiskFull));
        assert!(matches!(classify_failure("boom"), MediaError::ToolFailure(_)));
    }

    #[test]
    fn long_stderr_is_truncated_from_the_front() {
        let long = "x".repeat(5000) + "TAIL";
        match classify_failure(&long) {
            MediaError::ToolFailure(s) => {
                assert!(s.ends_with("TAIL"));
                assert!(s.len() < 1300);
            }
            other => panic!("{other:?}"),
        }
    }
}
