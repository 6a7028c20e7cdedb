use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use chrono::{SecondsFormat, Utc};

use crate::tool::CommandLog;

pub(crate) const REDACTED_ID: &str = "<patient>";

/// Replace every occurrence of each non-empty secret in `text`.
pub fn scrub(text: &str, secrets: &[String]) -> String {
    let mut out = text.to_string();
    for s in secrets.iter().filter(|s| !s.is_empty()) {
        out = out.replace(s.as_str(), REDACTED_ID);
    }
    out
}

/// Append-only feedback log of one job. Lines are scrubbed of the case's
/// patient id before they reach the file.
pub struct JobLog {
    file: Mutex<Option<File>>,
    secrets: Vec<String>,
}

impl JobLog {
    pub fn open(path: &Path, secrets: Vec<String>) -> Self {
        let file = OpenOptions::new().create(true).append(true).open(path);
        if let Err(e) = &file {
            log::warn!("cannot open job log {}: {e}", path.display());
        }
        Self { file: Mutex::new(file.ok()), secrets }
    }

    /// A log that discards everything.
    pub fn sink() -> Self {
        Self { file: Mutex::new(None), secrets: Vec::new() }
    }

    pub fn line(&self, msg: &str) {
        let ts = Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true);
        let msg = scrub(msg, &self.secrets);
        if let Some(f) = self.file.lock().unwrap().as_mut() {
            let _ = writeln!(f, "[{ts}] {msg}");
        }
    }
}

impl CommandLog for JobLog {
    fn command(&self, line: &str) {
        self.line(&format!("$ {line}"));
    }
}
