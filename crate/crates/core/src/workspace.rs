//! On-disk layout of a workspace.
//!
//! ```text
//! <root>/
//!   input/         user-provided case folders
//!   output/        <uuid>.mp4 results
//!   jobs/          one JSON document per job
//!   logs/          <job>.log feedback logs
//!   work/<job>/    intermediates kept for review
//!   registry.csv   patient id to pseudonym ledger
//!   config         key=value settings
//! ```

use std::path::{Path, PathBuf};

use crate::media::MediaError;
use crate::RESERVED_SUFFIX;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    /// Create the directory skeleton under `root` if missing.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, MediaError> {
        let root = std::path::absolute(root.into()).map_err(|e| MediaError::io(Path::new("."), e))?;
        let ws = Self { root };
        for dir in [ws.input_dir(), ws.output_dir(), ws.jobs_dir(), ws.logs_dir(), ws.work_dir()] {
            std::fs::create_dir_all(&dir).map_err(|e| MediaError::io(&dir, e))?;
        }
        Ok(ws)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn input_dir(&self) -> PathBuf {
        self.root.join("input")
    }

    pub fn output_dir(&self) -> PathBuf {
        self.root.join("output")
    }

    pub fn jobs_dir(&self) -> PathBuf {
        self.root.join("jobs")
    }

    pub fn logs_dir(&self) -> PathBuf {
        self.root.join("logs")
    }

    pub fn work_dir(&self) -> PathBuf {
        self.root.join("work")
    }

    pub fn registry_path(&self) -> PathBuf {
        self.root.join("registry.csv")
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config")
    }

    pub fn job_work_dir(&self, job: &str) -> PathBuf {
        self.work_dir().join(job)
    }

    pub fn job_log_path(&self, job: &str) -> PathBuf {
        self.logs_dir().join(format!("{job}.log"))
    }

    pub fn output_path(&self, pseudonym: &str) -> PathBuf {
        self.output_dir().join(format!("{pseudonym}.mp4"))
    }

    /// Remove every file or directory whose name carries [`RESERVED_SUFFIX`],
    /// anywhere in the workspace except `input/`. Returns what was removed.
    pub fn sweep_temporaries(&self) -> Result<Vec<PathBuf>, MediaError> {
        let mut removed = Vec::new();
        let input = self.input_dir();
        let mut stack = vec![self.root.clone()];
        while let Some(dir) = stack.pop() {
            let entries = match std::fs::read_dir(&dir) {
                Ok(e) => e,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => continue,
                Err(e) => return Err(MediaError::io(&dir, e)),
            };
            for entry in entries {
                let entry = entry.map_err(|e| MediaError::io(&dir, e))?;
                let path = entry.path();
                if path == input {
                    continue;
                }
                let is_dir = entry.file_type().map(|t| t.is_dir()).unwrap_or(false);
                if is_reserved(&path) {
                    let res = if is_dir { std::fs::remove_dir_all(&path) } else { std::fs::remove_file(&path) };
                    res.map_err(|e| MediaError::io(&path, e))?;
                    removed.push(path);
                } else if is_dir {
                    stack.push(path);
                }
            }
        }
        removed.sort();
        Ok(removed)
    }

    /// Paths under the workspace (outside `input/`) that carry the reserved suffix.
    pub fn find_temporaries(&self) -> Vec<PathBuf> {
        let mut found = Vec::new();
        let mut stack = vec![self.root.clone()];
        while let Some(dir) = stack.pop() {
            let Ok(entries) = std::fs::read_dir(&dir) else { continue };
            for entry in entries.flatten() {
                let path = entry.path();
                if path == self.input_dir() {
                    continue;
                }
                if is_reserved(&path) {
                    found.push(path);
                } else if entry.file_type().is_ok_and(|t| t.is_dir()) {
                    stack.push(path);
                }
            }
        }
        found.sort();
        found
    }
}

fn is_reserved(path: &Path) -> bool {
    path.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.contains(RESERVED_SUFFIX))
}
