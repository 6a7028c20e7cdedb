use std::path::{Path, PathBuf};

use vidpriv_core::media::is_video_file;

use crate::error::ApiError;
use crate::views::{FsEntry, FsListing};

fn canonical_roots(roots: &[PathBuf]) -> Vec<PathBuf> {
    roots.iter().filter_map(|r| r.canonicalize().ok()).collect()
}

fn entry(path: PathBuf) -> FsEntry {
    let is_dir = path.is_dir();
    let video_count = is_dir.then(|| {
        std::fs::read_dir(&path).map(|rd| rd.flatten().filter(|e| is_video_file(&e.path())).count()).unwrap_or(0)
    });
    FsEntry {
        name: path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string()),
        path,
        is_dir,
        video_count,
    }
}

/// Directories and video files under `path`, which must resolve inside one
/// of `roots`. Without a path, the roots themselves.
pub fn list(roots: &[PathBuf], path: Option<&Path>) -> Result<FsListing, ApiError> {
    let roots = canonical_roots(roots);
    let Some(path) = path else {
        return Ok(FsListing { path: None, parent: None, entries: roots.into_iter().map(entry).collect() });
    };
    let outside = || ApiError::not_found("no such folder under the configured roots");
    let dir = path.canonicalize().map_err(|_| outside())?;
    let root = roots.iter().find(|r| dir.starts_with(r)).ok_or_else(outside)?;
    if !dir.is_dir() {
        return Err(ApiError::validation("not a folder"));
    }
    let mut entries: Vec<FsEntry> = std::fs::read_dir(&dir)
        .map_err(|e| ApiError::internal(format!("cannot list folder: {e}")))?
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.is_dir() || is_video_file(p))
        .filter(|p| !p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.')))
        .map(entry)
        .collect();
    entries.sort_by(|a, b| b.is_dir.cmp(&a.is_dir).then_with(|| vidpriv_core::media::natural_cmp(&a.name, &b.name)));
    let parent = (&dir != root).then(|| dir.parent().map(Path::to_path_buf)).flatten();
    Ok(FsListing { path: Some(dir), parent, entries })
}
