use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::job::{Job, JobId};
use crate::media::temp_sibling;

/// One pretty-printed JSON document per job, replaced atomically on every change.
pub struct JobStore {
    dir: PathBuf,
}

impl JobStore {
    pub fn new(dir: PathBuf) -> Self {
        Self { dir }
    }

    pub fn path_of(&self, id: &JobId) -> PathBuf {
        self.dir.join(format!("{id}.json"))
    }

    pub fn save(&self, job: &Job) -> std::io::Result<()> {
        let path = self.path_of(&job.id);
        let tmp = temp_sibling(&path);
        let body = serde_json::to_vec_pretty(job).map_err(std::io::Error::other)?;
        let res = (|| {
            let mut f = File::create(&tmp)?;
            f.write_all(&body)?;
            f.sync_all()?;
            std::fs::rename(&tmp, &path)
        })();
        if res.is_err() {
            let _ = std::fs::remove_file(&tmp);
        }
        res
    }

    /// Every readable job document, in enqueue order. Unreadable documents are
    /// reported and skipped.
    pub fn load_all(&self) -> Vec<Job> {
        let mut jobs = Vec::new();
        let Ok(entries) = std::fs::read_dir(&self.dir) else { return jobs };
        for entry in entries.flatten() {
            let path = entry.path();
            let is_doc = path.extension().is_some_and(|e| e == "json")
                && path.file_stem().and_then(|s| s.to_str()).and_then(JobId::parse).is_some();
            if !is_doc {
                continue;
            }
            match load(&path) {
                Ok(job) => jobs.push(job),
                Err(e) => log::warn!("skipping unreadable job document {}: {e}", path.display()),
            }
        }
        jobs.sort_by_key(|j| j.seq);
        jobs
    }
}

fn load(path: &Path) -> Result<Job, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}
